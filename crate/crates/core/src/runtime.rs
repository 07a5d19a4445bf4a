//! Play mode: run an engine forward one tick at a time against live input.

use std::collections::BTreeSet;

use crate::engine::{predict_facts, Dynamics, Engine};
use crate::fact::{
    extract_facts, input_from_facts, render_objects, Buttons, Fact, FactSet, Frame, Grid, InputVar,
    ObjectId,
};
use crate::learner::LearnerConfig;

/// Ticks per second suggested to interactive clients.
pub const DEFAULT_TICK_HZ: u32 = 6;

#[derive(Debug, Clone)]
pub struct PlaySession {
    engine: Engine,
    facts: FactSet,
    tick: usize,
    config: LearnerConfig,
    grid: Grid,
}

impl PlaySession {
    /// Starts play from `initial` with every button released.
    pub fn start(
        engine: Engine,
        initial: &Frame,
        universe: &BTreeSet<ObjectId>,
        config: LearnerConfig,
    ) -> Self {
        let mut facts = extract_facts(initial, universe);
        set_inputs(&mut facts, Buttons::none(), Buttons::none());
        PlaySession {
            engine,
            facts,
            tick: 0,
            config,
            grid: initial.grid(),
        }
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn facts(&self) -> &FactSet {
        &self.facts
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// The current state as a frame.
    pub fn frame(&self) -> Frame {
        render(&self.facts, self.tick, self.grid)
    }

    /// Advances one tick with `buttons` held and returns the new frame.
    pub fn step(&mut self, buttons: Buttons) -> Frame {
        let previous = input_from_facts(&self.facts).buttons;
        set_inputs(&mut self.facts, buttons, previous);
        let dynamics = Dynamics::new(self.config.kinematics, self.grid);
        let mut next = predict_facts(&self.engine, &self.facts, &dynamics).facts;
        // The engine never decides what the player presses.
        next.retain(|f| !matches!(f, Fact::Variable { .. }));
        next.extend(
            self.facts
                .iter()
                .filter(|f| matches!(f, Fact::Variable { .. }))
                .cloned(),
        );
        self.facts = next;
        self.tick += 1;
        self.frame()
    }
}

fn set_inputs(facts: &mut FactSet, current: Buttons, previous: Buttons) {
    facts.retain(|f| !matches!(f, Fact::Variable { .. }));
    for var in InputVar::all() {
        let state = if var.previous { &previous } else { &current };
        facts.insert(Fact::Variable {
            name: var,
            value: state.get(var.button),
        });
    }
}

fn render(facts: &FactSet, index: usize, grid: Grid) -> Frame {
    let mut frame = Frame::new(index, grid);
    frame.objects = render_objects(facts);
    frame.input = input_from_facts(facts);
    frame
}

/// Convenience wrapper over [`PlaySession::start`].
pub fn start_play(
    engine: Engine,
    initial: &Frame,
    universe: &BTreeSet<ObjectId>,
    config: LearnerConfig,
) -> PlaySession {
    PlaySession::start(engine, initial, universe, config)
}

/// Plays `inputs` from `frame0` headlessly; one output frame per input.
pub fn run_trace(
    engine: &Engine,
    frame0: &Frame,
    inputs: &[Buttons],
    config: LearnerConfig,
) -> Vec<Frame> {
    let universe = frame0.objects.iter().map(|o| o.id).collect();
    let mut session = PlaySession::start(engine.clone(), frame0, &universe, config);
    inputs.iter().map(|b| session.step(*b)).collect()
}
