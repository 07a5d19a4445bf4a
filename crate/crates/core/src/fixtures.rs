//! Reference demonstrations for the two tutorial games.
//!
//! Flappy: a bird that keeps falling and jumps on space, and a pipe that
//! drifts left and teleports back to the right edge. Sokoban: a player that
//! steps right on the right key and pushes a crate.

use crate::fact::{Button, Buttons, Frame, GameObject, Grid, SpriteRef};
use crate::persistence::Project;

pub const FLAPPY: &str = "flappy";
pub const SOKOBAN: &str = "sokoban";

pub fn names() -> [&'static str; 2] {
    [FLAPPY, SOKOBAN]
}

/// Frames of a named reference demonstration.
pub fn by_name(name: &str) -> Option<Vec<Frame>> {
    match name {
        FLAPPY => Some(flappy_frames()),
        SOKOBAN => Some(sokoban_frames()),
        _ => None,
    }
}

/// A named reference demonstration as a project with no engine.
pub fn project(name: &str) -> Option<Project> {
    by_name(name).map(|frames| Project::from_frames(name, frames))
}

pub fn bird() -> SpriteRef {
    SpriteRef::new("bird", 1, 1)
}

pub fn longblock() -> SpriteRef {
    SpriteRef::new("longblock", 1, 4)
}

pub fn player() -> SpriteRef {
    SpriteRef::new("player", 1, 1)
}

pub fn crate_sprite() -> SpriteRef {
    SpriteRef::new("crate", 1, 1)
}

pub const BIRD: u32 = 0;
pub const PIPE: u32 = 1;
pub const PLAYER: u32 = 0;
pub const CRATE: u32 = 1;

/// Bird heights and space presses, one entry per frame.
const FLAPPY_BIRD: [(i32, bool); 16] = [
    (6, false),
    (5, false),
    (4, true),
    (5, false),
    (4, false),
    (3, true),
    (4, false),
    (3, false),
    (2, false),
    (1, true),
    (2, false),
    (1, false),
    (0, true),
    (1, false),
    (0, true),
    (1, false),
];

/// Pipe column per frame: drifts left one cell a frame and wraps from
/// column 0 back to column 11.
const FLAPPY_PIPE: [i32; 16] = [9, 8, 7, 6, 5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6];

pub fn flappy_frames() -> Vec<Frame> {
    let grid = Grid::default();
    FLAPPY_BIRD
        .iter()
        .zip(FLAPPY_PIPE)
        .enumerate()
        .map(|(i, (&(bird_y, space), pipe_x))| {
            let mut bird_obj = GameObject::new(BIRD, bird(), 2, bird_y);
            let mut pipe_obj = GameObject::new(PIPE, longblock(), pipe_x, 0);
            if i == 0 {
                bird_obj = bird_obj.with_velocity(0, -1);
                pipe_obj = pipe_obj.with_velocity(-1, 0);
            }
            let buttons = if space {
                Buttons::pressed(Button::Space)
            } else {
                Buttons::none()
            };
            Frame::new(i, grid)
                .with_object(bird_obj)
                .with_object(pipe_obj)
                .with_buttons(buttons)
        })
        .collect()
}

/// Player column, crate column and right-key state per frame.
const SOKOBAN_STEPS: [(i32, i32, bool); 11] = [
    (2, 6, true),
    (3, 6, false),
    (3, 6, true),
    (4, 6, false),
    (4, 6, true),
    (5, 6, false),
    (5, 6, true),
    (6, 7, false),
    (6, 7, false),
    (6, 7, true),
    (7, 8, false),
];

pub fn sokoban_frames() -> Vec<Frame> {
    let grid = Grid::default();
    SOKOBAN_STEPS
        .iter()
        .enumerate()
        .map(|(i, &(player_x, crate_x, right))| {
            let buttons = if right {
                Buttons::pressed(Button::Right)
            } else {
                Buttons::none()
            };
            Frame::new(i, grid)
                .with_object(GameObject::new(PLAYER, player(), player_x, 4))
                .with_object(GameObject::new(CRATE, crate_sprite(), crate_x, 4))
                .with_buttons(buttons)
        })
        .collect()
}
