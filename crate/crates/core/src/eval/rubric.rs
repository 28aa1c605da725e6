//! Acceptance rules stored alongside each catalog entry.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepVerb {
    Forward,
    Backward,
    Left,
    Right,
    /// Either turn direction.
    Turn,
    Stop,
    Wall,
    /// Any forward motion, timed, indefinite or guarded.
    Advance,
    /// Forward or backward.
    Translate,
}

impl StepVerb {
    pub fn matches(self, c: &Command) -> bool {
        use Command::*;
        match self {
            StepVerb::Forward => matches!(c, Forward(_)),
            StepVerb::Backward => matches!(c, Backward(_)),
            StepVerb::Left => matches!(c, TurnLeft(_)),
            StepVerb::Right => matches!(c, TurnRight(_)),
            StepVerb::Turn => c.is_turn(),
            StepVerb::Stop => matches!(c, Stop),
            StepVerb::Wall => matches!(c, ForwardUntilWall),
            StepVerb::Advance => matches!(c, Forward(_) | ForwardUntilWall),
            StepVerb::Translate => matches!(c, Forward(_) | Backward(_)),
        }
    }
}

/// One expected command. `min`/`max` bound the magnitude; setting either
/// rules out an indefinite command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub verb: StepVerb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Step {
    pub fn matches(&self, c: &Command) -> bool {
        if !self.verb.matches(c) {
            return false;
        }
        if self.min.is_none() && self.max.is_none() {
            return true;
        }
        match c.magnitude() {
            None => false,
            Some(m) => self.min.is_none_or(|lo| m >= lo) && self.max.is_none_or(|hi| m <= hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Rule {
    /// Commands match `steps` one to one.
    Sequence {
        steps: Vec<Step>,
        /// All magnitudes in the matched commands are equal.
        #[serde(default)]
        equal_magnitudes: bool,
        /// A single extra stop at the end is tolerated.
        #[serde(default)]
        allow_trailing_stop: bool,
    },
    /// At least one command matches `verb`.
    Contains { verb: StepVerb },
    /// Ideal kinematics end where they began. Indefinite motions never
    /// qualify.
    ReturnToStart {
        #[serde(default)]
        first: Option<StepVerb>,
        /// Some intermediate position lies behind the start.
        #[serde(default)]
        visit_behind: bool,
        #[serde(default = "default_tolerance")]
        tolerance_cm: f64,
    },
    /// A multi-leg route.
    Tour {
        min_commands: usize,
        min_turns: usize,
        min_translations: usize,
        #[serde(default)]
        closed: bool,
        #[serde(default = "default_tolerance")]
        tolerance_cm: f64,
    },
}

fn default_tolerance() -> f64 {
    1.0
}

/// A rule that may only apply when a named judging flag is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    #[serde(flatten)]
    pub rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_flag: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOptions {
    pub flags: BTreeSet<String>,
}

impl JudgeOptions {
    pub fn with_flag(mut self, flag: &str) -> Self {
        self.flags.insert(flag.to_string());
        self
    }
}

/// Positions visited under ideal kinematics, starting at the origin facing
/// +x. `None` if any motion has no fixed extent.
pub fn ideal_path(seq: &CommandSequence) -> Option<Vec<(f64, f64)>> {
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let mut path = vec![(x, y)];
    for c in seq.iter() {
        match *c {
            Command::Forward(Some(d)) | Command::Backward(Some(d)) => {
                let s = if matches!(c, Command::Forward(_)) { d } else { -d };
                let rad = heading.to_radians();
                x += s * rad.cos();
                y += s * rad.sin();
                path.push((x, y));
            }
            Command::TurnLeft(a) => heading += a,
            Command::TurnRight(a) => heading -= a,
            Command::Stop => {}
            Command::Forward(None) | Command::Backward(None) | Command::ForwardUntilWall => return None,
        }
    }
    Some(path)
}

fn closes(path: &[(f64, f64)], tol: f64) -> bool {
    path.last().is_some_and(|&(x, y)| x.hypot(y) <= tol)
}

impl Rule {
    pub fn accepts(&self, seq: &CommandSequence) -> bool {
        let cmds = seq.commands();
        match self {
            Rule::Sequence { steps, equal_magnitudes, allow_trailing_stop } => {
                let body = match cmds.split_last() {
                    Some((Command::Stop, rest))
                        if *allow_trailing_stop && rest.len() == steps.len() =>
                    {
                        rest
                    }
                    _ => cmds,
                };
                if body.len() != steps.len() || !steps.iter().zip(body).all(|(s, c)| s.matches(c)) {
                    return false;
                }
                if *equal_magnitudes {
                    let mags: Vec<f64> = body.iter().filter_map(Command::magnitude).collect();
                    return mags.windows(2).all(|w| w[0] == w[1]);
                }
                true
            }
            Rule::Contains { verb } => cmds.iter().any(|c| verb.matches(c)),
            Rule::ReturnToStart { first, visit_behind, tolerance_cm } => {
                if first.is_some_and(|v| !v.matches(&cmds[0])) {
                    return false;
                }
                let Some(path) = ideal_path(seq) else { return false };
                if path.len() < 2 || !closes(&path, *tolerance_cm) {
                    return false;
                }
                !*visit_behind || path.iter().any(|&(x, _)| x < -tolerance_cm)
            }
            Rule::Tour { min_commands, min_turns, min_translations, closed, tolerance_cm } => {
                let turns = cmds.iter().filter(|c| c.is_turn()).count();
                let moves = cmds
                    .iter()
                    .filter(|c| matches!(c, Command::Forward(_) | Command::Backward(_) | Command::ForwardUntilWall))
                    .count();
                if cmds.len() < *min_commands || turns < *min_turns || moves < *min_translations {
                    return false;
                }
                !*closed || ideal_path(seq).is_some_and(|p| closes(&p, *tolerance_cm))
            }
        }
    }
}

impl Alternative {
    pub fn applies(&self, opts: &JudgeOptions) -> bool {
        self.requires_flag.as_ref().is_none_or(|f| opts.flags.contains(f))
    }
}
