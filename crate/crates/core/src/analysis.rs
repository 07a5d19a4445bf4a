//! Clustering learned rules: a fixed-length numeric encoding of each rule,
//! a diagonal-covariance Gaussian mixture fitted by EM, and elbow-method
//! model selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Rule;
use crate::error::{Error, Result};
use crate::fact::Fact;

pub const RULE_DIMS: usize = 20;
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_K_MAX: usize = 12;

/// Dimension layout of a [`RuleVector`].
pub mod dims {
    /// One-hot pre-effect category (5 dims).
    pub const PRE_CATEGORY: usize = 0;
    pub const PRE_VALUE: usize = 5;
    /// One-hot post-effect category (5 dims).
    pub const POST_CATEGORY: usize = 6;
    pub const POST_VALUE: usize = 11;
    /// Condition counts by family (8 dims): animation, velocity x,
    /// velocity y, position x, position y, variable, relationship, empty.
    pub const CONDITION_COUNTS: usize = 12;
}

/// Effect categories, in one-hot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Velocity,
    Position,
    Animation,
    Variable,
    Empty,
}

fn category(fact: &Fact) -> Category {
    match fact {
        Fact::VelocityX { .. } | Fact::VelocityY { .. } => Category::Velocity,
        Fact::PositionX { .. }
        | Fact::PositionY { .. }
        | Fact::RelationshipX { .. }
        | Fact::RelationshipY { .. } => Category::Position,
        Fact::Animation { .. } => Category::Animation,
        Fact::Variable { .. } => Category::Variable,
        Fact::Empty { .. } => Category::Empty,
    }
}

fn value(fact: &Fact) -> f64 {
    match fact {
        Fact::Variable { value, .. } => f64::from(u8::from(*value)),
        other => other.numeric_value().map(f64::from).unwrap_or(0.0),
    }
}

fn condition_family(fact: &Fact) -> usize {
    match fact {
        Fact::Animation { .. } => 0,
        Fact::VelocityX { .. } => 1,
        Fact::VelocityY { .. } => 2,
        Fact::PositionX { .. } => 3,
        Fact::PositionY { .. } => 4,
        Fact::Variable { .. } => 5,
        Fact::RelationshipX { .. } | Fact::RelationshipY { .. } => 6,
        Fact::Empty { .. } => 7,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleVector(pub [f64; RULE_DIMS]);

impl RuleVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode_rule(rule: &Rule) -> RuleVector {
    let mut v = [0.0; RULE_DIMS];
    v[dims::PRE_CATEGORY + category(&rule.pre) as usize] = 1.0;
    v[dims::PRE_VALUE] = value(&rule.pre);
    v[dims::POST_CATEGORY + category(&rule.post) as usize] = 1.0;
    v[dims::POST_VALUE] = value(&rule.post);
    for fact in &rule.conditions {
        v[dims::CONDITION_COUNTS + condition_family(fact)] += 1.0;
    }
    RuleVector(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// EM stops once an iteration improves the log-likelihood by less.
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariances, one row per component.
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub seed: u64,
    /// Log-likelihood before the first and after every EM iteration.
    pub history: Vec<f64>,
}

impl GmmModel {
    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn components(&self) -> Vec<Component<'_>> {
        (0..self.k)
            .map(|j| Component::new(self.weights[j], &self.means[j], &self.variances[j]))
            .collect()
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut logs: Vec<f64> = self.components().iter().map(|c| c.log_density(x)).collect();
        let total = log_sum_exp(&logs);
        for l in &mut logs {
            *l = (*l - total).exp();
        }
        logs
    }

    pub fn log_likelihood_of(&self, data: &[Vec<f64>]) -> f64 {
        e_step(&self.components(), data).1
    }
}

/// One mixture component with its normalizing constant folded in.
struct Component<'a> {
    log_scale: f64,
    mean: &'a [f64],
    inv_var: Vec<f64>,
}

impl<'a> Component<'a> {
    fn new(weight: f64, mean: &'a [f64], var: &[f64]) -> Self {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let log_det: f64 = var.iter().map(|v| ln_2pi + v.ln()).sum();
        Component {
            log_scale: weight.ln() - 0.5 * log_det,
            mean,
            inv_var: var.iter().map(|v| 1.0 / v).collect(),
        }
    }

    /// Log of `weight * N(x | mean, diag(var))`.
    fn log_density(&self, x: &[f64]) -> f64 {
        let q: f64 = x
            .iter()
            .zip(self.mean)
            .zip(&self.inv_var)
            .map(|((x, m), iv)| (x - m) * (x - m) * iv)
            .sum();
        self.log_scale - 0.5 * q
    }
}

/// Responsibilities (row per vector) and the total log-likelihood.
fn e_step(components: &[Component<'_>], data: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut ll = 0.0;
    let resp = data
        .iter()
        .map(|x| {
            let mut logs: Vec<f64> = components.iter().map(|c| c.log_density(x)).collect();
            let total = log_sum_exp(&logs);
            ll += total;
            for l in &mut logs {
                *l = (*l - total).exp();
            }
            logs
        })
        .collect();
    (resp, ll)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_data(data: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidK { k, n: data.len() });
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// k-means++ seeding: the first centre uniformly, each further centre with
/// probability proportional to its squared distance from the nearest centre
/// chosen so far.
fn seed_centres(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centres = vec![data[rng.random_range(0..data.len())].clone()];
    let mut nearest: Vec<f64> = data
        .iter()
        .map(|x| squared_distance(x, &centres[0]))
        .collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        let centre = data[pick].clone();
        for (n, x) in nearest.iter_mut().zip(data) {
            *n = n.min(squared_distance(x, &centre));
        }
        centres.push(centre);
    }
    centres
}

fn pooled_variance(data: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = data.len() as f64;
    (0..d)
        .map(|i| {
            let mean = data.iter().map(|x| x[i]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / n;
            var.max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Fits a `k`-component diagonal Gaussian mixture by EM.
pub fn fit_gmm(data: &[Vec<f64>], k: usize, seed: u64, options: GmmOptions) -> Result<GmmModel> {
    let d = check_data(data, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooled = pooled_variance(data, d);
    let mut model = GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means: seed_centres(data, k, &mut rng),
        variances: vec![pooled; k],
        log_likelihood: 0.0,
        seed,
        history: Vec::new(),
    };
    let (mut resp, mut ll) = e_step(&model.components(), data);
    model.history.push(ll);
    for _ in 0..options.max_iter {
        m_step(&mut model, data, d, &resp);
        let (next_resp, next) = e_step(&model.components(), data);
        model.history.push(next);
        let gain = next - ll;
        resp = next_resp;
        ll = next;
        if gain < options.tol {
            break;
        }
    }
    model.log_likelihood = ll;
    Ok(model)
}

fn m_step(model: &mut GmmModel, data: &[Vec<f64>], d: usize, resp: &[Vec<f64>]) {
    let n = data.len() as f64;
    for j in 0..model.k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        if nk <= f64::MIN_POSITIVE {
            // A component nobody belongs to keeps its parameters and no weight.
            model.weights[j] = 0.0;
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += r[j] * xi;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                *v += r[j] * (xi - m) * (xi - m);
            }
        }
        var.iter_mut()
            .for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
        model.weights[j] = nk / n;
        model.means[j] = mean;
        model.variances[j] = var;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElbowResult {
    pub k: usize,
    /// Negative log-likelihood for k = 1, 2, ...
    pub curve: Vec<f64>,
    pub models: Vec<GmmModel>,
}

/// Smallest distance below the chord that counts as an elbow, in the unit
/// square the curve is scaled into. A straight curve scores 0, a right
/// angle about 0.7.
pub const MIN_ELBOW_DISTANCE: f64 = 0.2;

/// Fits k = 1..=k_max (capped at the number of vectors, each with seed
/// `seed + k`) and picks the elbow of the negative log-likelihood curve.
/// See [`elbow_of`].
pub fn elbow_select(data: &[Vec<f64>], k_max: usize, seed: u64) -> Result<ElbowResult> {
    if k_max < 2 {
        return Err(Error::InvalidK {
            k: k_max,
            n: data.len(),
        });
    }
    check_data(data, 1)?;
    let k_max = k_max.min(data.len());
    let models = std::thread::scope(|scope| {
        let fits: Vec<_> = (1..=k_max)
            .map(|k| {
                scope.spawn(move || {
                    fit_gmm(data, k, seed.wrapping_add(k as u64), GmmOptions::default())
                })
            })
            .collect();
        fits.into_iter()
            .map(|h| h.join().expect("mixture fit panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let curve: Vec<f64> = models.iter().map(|m| -m.log_likelihood).collect();
    let k = elbow_of(&curve);
    Ok(ElbowResult { k, curve, models })
}

/// Elbow of a decreasing cost curve, as a 1-based k.
///
/// The curve is first replaced by its running minimum (a larger mixture that
/// EM fitted worse than a smaller one says nothing about the data), then
/// both axes are scaled to [0, 1]. The elbow is the point farthest below the
/// chord from the first to the last point, provided it is at least
/// [`MIN_ELBOW_DISTANCE`] away; otherwise k = 1.
pub fn elbow_of(curve: &[f64]) -> usize {
    let curve: Vec<f64> = curve
        .iter()
        .scan(f64::INFINITY, |best, c| {
            *best = best.min(*c);
            Some(*best)
        })
        .collect();
    let last = curve.len().saturating_sub(1);
    if last == 0 {
        return 1;
    }
    let (first_y, last_y) = (curve[0], curve[last]);
    let span = first_y - last_y;
    if span.abs() <= f64::EPSILON * first_y.abs().max(1.0) {
        return 1;
    }
    // Scaled so the chord runs from (0, 1) to (1, 0).
    let distance = |i: usize| {
        let x = i as f64 / last as f64;
        let y = (curve[i] - last_y) / span;
        (1.0 - x - y) / std::f64::consts::SQRT_2
    };
    let mut best = (1, MIN_ELBOW_DISTANCE);
    for i in 1..last {
        let d = distance(i);
        if d >= best.1 {
            best = (i + 1, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assignment {
    pub cluster: usize,
    pub responsibility: f64,
}

/// Most probable component per vector; ties go to the lower component id.
pub fn assign_clusters(model: &GmmModel, data: &[Vec<f64>]) -> Vec<Assignment> {
    data.iter()
        .map(|x| {
            let resp = model.responsibilities(x);
            let mut best = Assignment {
                cluster: 0,
                responsibility: resp[0],
            };
            for (j, r) in resp.iter().enumerate().skip(1) {
                if *r > best.responsibility {
                    best = Assignment {
                        cluster: j,
                        responsibility: *r,
                    };
                }
            }
            best
        })
        .collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let rows = a.iter().max().map_or(0, |m| m + 1);
    let cols = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; cols]; rows];
    for (i, j) in a.iter().zip(b) {
        table[*i][*j] += 1;
    }
    let index: f64 = table.iter().flatten().map(|c| choose2(*c)).sum();
    let row_sums: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let col_sums: f64 = (0..cols)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = row_sums * col_sums / total;
    let max = (row_sums + col_sums) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RuleId;
    use crate::fact::FactSet;
    use rand_distr::{Distribution, Normal};

    /// 100 points around each of three centres a unit apart.
    fn three_blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for label in 0..3 {
            for _ in 0..100 {
                let mut x: Vec<f64> = (0..RULE_DIMS).map(|_| noise.sample(&mut rng)).collect();
                if label > 0 {
                    x[label - 1] += 1.0;
                }
                data.push(x);
                labels.push(label);
            }
        }
        (data, labels)
    }

    fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                pairs += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / pairs;
        let max = (only_a + only_b) / 2.0;
        (both - expected) / (max - expected)
    }

    fn jump_rule() -> Rule {
        let mut conditions: FactSet = crate::fact::InputVar::all()
            .filter(|v| v.to_string() != "spacePrev")
            .map(|v| Fact::Variable {
                name: v,
                value: v.to_string() == "space",
            })
            .collect();
        conditions.extend([
            Fact::velocity_y(1, 0),
            Fact::velocity_x(1, -1),
            Fact::animation(1, "longblock", 1, 4),
            Fact::velocity_x(0, 0),
            Fact::velocity_y(0, -1),
            Fact::animation(0, "bird", 1, 1),
        ]);
        Rule::new(
            RuleId(2),
            Fact::velocity_y(0, -1),
            Fact::velocity_y(0, 1),
            conditions,
        )
        .unwrap()
    }

    #[test]
    fn encodes_the_jump_rule() {
        let v = encode_rule(&jump_rule()).0;
        assert_eq!(&v[0..5], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[dims::PRE_VALUE], -1.0);
        assert_eq!(&v[6..11], &v[0..5]);
        assert_eq!(v[dims::POST_VALUE], 1.0);
        assert_eq!(&v[12..20], &[2.0, 2.0, 2.0, 0.0, 0.0, 9.0, 0.0, 0.0]);
    }

    #[test]
    fn encodes_appearance() {
        let cond: FactSet = [Fact::variable("space", true)].into_iter().collect();
        let rule = Rule::new(
            RuleId(0),
            Fact::empty(3),
            Fact::animation(3, "coin", 1, 1),
            cond,
        )
        .unwrap();
        let v = encode_rule(&rule).0;
        assert_eq!(v[4], 1.0);
        assert_eq!(v[8], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn single_component_is_closed_form() {
        let (data, _) = three_blobs(1);
        let m = fit_gmm(&data, 1, 0, GmmOptions::default()).unwrap();
        let n = data.len() as f64;
        for i in 0..RULE_DIMS {
            let mean = data.iter().map(|x| x[i]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / n;
            assert!((m.means[0][i] - mean).abs() < 1e-12);
            assert!((m.variances[0][i] - var.max(VARIANCE_FLOOR)).abs() < 1e-12);
        }
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn recovers_three_blobs() {
        let (data, labels) = three_blobs(7);
        let m = fit_gmm(&data, 3, 11, GmmOptions::default()).unwrap();
        let assigned: Vec<usize> = assign_clusters(&m, &data)
            .iter()
            .map(|a| a.cluster)
            .collect();
        assert!(adjusted_rand_index(&labels, &assigned) >= 0.9);
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.variances.iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
        for w in m.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
        assert_eq!(fit_gmm(&data, 3, 11, GmmOptions::default()).unwrap(), m);
    }

    #[test]
    fn elbow_finds_three() {
        let (data, _) = three_blobs(3);
        let elbow = elbow_select(&data, DEFAULT_K_MAX, 5).unwrap();
        assert_eq!(elbow.k, 3, "{:?}", elbow.curve);
        assert_eq!(elbow.curve.len(), DEFAULT_K_MAX);
    }

    #[test]
    fn elbow_on_one_blob_is_small() {
        let (data, labels) = three_blobs(9);
        let one: Vec<Vec<f64>> = data
            .into_iter()
            .zip(labels)
            .filter(|(_, l)| *l == 0)
            .map(|(x, _)| x)
            .collect();
        let elbow = elbow_select(&one, DEFAULT_K_MAX, 2).unwrap();
        assert!(elbow.k <= 2, "{} {:?}", elbow.k, elbow.curve);
    }

    #[test]
    fn seven_components_fit() {
        let (data, _) = three_blobs(4);
        let m = fit_gmm(&data, 7, 1, GmmOptions::default()).unwrap();
        assert_eq!(m.k, 7);
        const { assert!(DEFAULT_K_MAX >= 7) };
    }

    #[test]
    fn k_must_fit_the_data() {
        let data = vec![vec![0.0; 3]; 2];
        assert!(matches!(
            fit_gmm(&data, 3, 0, GmmOptions::default()),
            Err(Error::InvalidK { k: 3, n: 2 })
        ));
        assert!(matches!(
            fit_gmm(&data, 0, 0, GmmOptions::default()),
            Err(Error::InvalidK { .. })
        ));
        let ragged = vec![vec![0.0; 3], vec![0.0; 2]];
        assert!(matches!(
            fit_gmm(&ragged, 1, 0, GmmOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ties_go_to_the_lower_id() {
        let model = GmmModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            variances: vec![vec![1.0], vec![1.0]],
            log_likelihood: 0.0,
            seed: 0,
            history: vec![],
        };
        let a = assign_clusters(&model, &[vec![0.0], vec![1.0]]);
        assert_eq!(a[0].cluster, 0);
        assert!((a[0].responsibility - 0.5).abs() < 1e-12);
        assert_eq!(a[1].cluster, 1);
    }

    #[test]
    fn assignments_match_direct_densities() {
        let (data, _) = three_blobs(5);
        let m = fit_gmm(&data, 3, 2, GmmOptions::default()).unwrap();
        let assigned = assign_clusters(&m, &data);
        for (x, a) in data.iter().zip(&assigned) {
            let dens: Vec<f64> = (0..m.k)
                .map(|j| {
                    let mut p = m.weights[j];
                    for ((xi, mu), v) in x.iter().zip(&m.means[j]).zip(&m.variances[j]) {
                        p *= (-(xi - mu).powi(2) / (2.0 * v)).exp()
                            / (2.0 * std::f64::consts::PI * v).sqrt();
                    }
                    p
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let best = (0..m.k).fold(0, |b, j| if dens[j] > dens[b] { j } else { b });
            assert_eq!(a.cluster, best);
            assert!((a.responsibility - dens[best] / total).abs() < 1e-6);
        }
    }

    #[test]
    fn ari_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.random_range(3..40);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let fast = adjusted_rand_index(&a, &b);
            let slow = pair_counting_ari(&a, &b);
            if slow.is_finite() {
                assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
            }
        }
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    }
}
