//! Deterministic pattern translator covering the constructions in the
//! evaluation catalog.

use std::f64::consts::PI;

use crate::command::{Command, CommandSequence};

/// Distance used for a motion with no magnitude when it is one step of a
/// longer utterance. A lone "move forward" stays indefinite.
pub const DEFAULT_STEP_CM: f64 = 50.0;
pub const DEFAULT_TURN_DEG: f64 = 90.0;

const CM_PER_FOOT: f64 = 30.48;
const CM_PER_INCH: f64 = 2.54;

/// Translates `utterance` into wire form, or `None` when some clause is
/// outside the rule set.
pub fn rule_translate(utterance: &str) -> Option<String> {
    rule_sequence(utterance).map(|s| s.to_string())
}

pub fn rule_sequence(utterance: &str) -> Option<CommandSequence> {
    let clauses = split_clauses(&tokenize(utterance));
    if clauses.is_empty() {
        return None;
    }
    let multi = clauses.len() > 1;
    let mut out: Vec<Command> = Vec::new();
    let mut previous: Option<Vec<Command>> = None;
    for clause in &clauses {
        let words: Vec<&str> = clause.iter().map(String::as_str).collect();
        let cmds = match interpret(&words, multi)? {
            Clause::Commands(c) => c,
            Clause::Return => mirror(previous.as_deref()?)?,
        };
        out.extend_from_slice(&cmds);
        previous = Some(cmds);
    }
    CommandSequence::new(out).ok()
}

enum Clause {
    Commands(Vec<Command>),
    /// "come back": undo the previous clause.
    Return,
}

/// The motions that undo `cmds`, in reverse order.
fn mirror(cmds: &[Command]) -> Option<Vec<Command>> {
    let undone: Vec<Command> = cmds
        .iter()
        .rev()
        .filter_map(|c| match *c {
            Command::Forward(d) => Some(Command::Backward(d)),
            Command::Backward(d) => Some(Command::Forward(d)),
            Command::TurnLeft(a) => Some(Command::TurnRight(a)),
            Command::TurnRight(a) => Some(Command::TurnLeft(a)),
            // The distance covered is only known at run time.
            Command::ForwardUntilWall => Some(Command::Backward(None)),
            Command::Stop => None,
        })
        .collect();
    (!undone.is_empty()).then_some(undone)
}

fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase().replace('π', " pi ");
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if c.is_ascii_digit() || (c == '.' && prev_digit && next_digit) {
            if cur.chars().last().is_some_and(char::is_alphabetic) {
                flush(&mut cur, &mut tokens);
            }
            cur.push(c);
        } else if c.is_alphabetic() || c == '\'' || c == '-' {
            if cur.chars().last().is_some_and(|l| l.is_ascii_digit()) {
                flush(&mut cur, &mut tokens);
            }
            cur.push(c);
        } else {
            flush(&mut cur, &mut tokens);
            match c {
                ',' | ';' | '.' | '!' | '?' => tokens.push(",".into()),
                '°' => tokens.push("deg".into()),
                _ => {}
            }
        }
    }
    flush(&mut cur, &mut tokens);
    tokens
}

fn split_clauses(tokens: &[String]) -> Vec<Vec<String>> {
    let mut clauses = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for t in tokens {
        if matches!(t.as_str(), "," | "then" | "and" | "next" | "afterwards") {
            if !cur.is_empty() {
                clauses.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(t.clone());
        }
    }
    if !cur.is_empty() {
        clauses.push(cur);
    }
    clauses
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Quantity {
    /// Bare number.
    Plain(f64),
    Centimeters(f64),
    Degrees(f64),
}

fn word_number(w: &str) -> Option<f64> {
    let n = match w {
        "zero" => 0.0,
        "one" => 1.0,
        "two" => 2.0,
        "three" => 3.0,
        "four" => 4.0,
        "five" => 5.0,
        "six" => 6.0,
        "seven" => 7.0,
        "eight" => 8.0,
        "nine" => 9.0,
        "ten" => 10.0,
        "twenty" => 20.0,
        "thirty" => 30.0,
        "forty" => 40.0,
        "fifty" => 50.0,
        "hundred" => 100.0,
        _ => return None,
    };
    Some(n)
}

fn number(w: &str) -> Option<f64> {
    if w.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        return w.parse().ok();
    }
    word_number(w)
}

/// First magnitude in the clause, converted to centimeters or degrees.
fn quantity(words: &[&str]) -> Option<Quantity> {
    for (i, w) in words.iter().enumerate() {
        if *w == "pi" {
            return Some(Quantity::Degrees(180.0));
        }
        let Some(n) = number(w) else { continue };
        let unit = words.get(i + 1).copied();
        let q = match unit {
            Some("cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres") => Quantity::Centimeters(n),
            Some("mm" | "millimeter" | "millimeters") => Quantity::Centimeters(n / 10.0),
            Some("m" | "meter" | "meters" | "metre" | "metres") => Quantity::Centimeters(n * 100.0),
            Some("ft" | "foot" | "feet") => Quantity::Centimeters(n * CM_PER_FOOT),
            Some("in" | "inch" | "inches") => Quantity::Centimeters(n * CM_PER_INCH),
            Some("deg" | "degree" | "degrees") => Quantity::Degrees(n),
            Some("rad" | "rads" | "radian" | "radians") => Quantity::Degrees(n * 180.0 / PI),
            // "2 pi radians"
            Some("pi") => Quantity::Degrees(n * 180.0),
            _ => Quantity::Plain(n),
        };
        return Some(q);
    }
    None
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn angle(words: &[&str], default: f64) -> Option<f64> {
    match quantity(words) {
        None => Some(default),
        Some(Quantity::Plain(a) | Quantity::Degrees(a)) => Some(round2(a)),
        Some(Quantity::Centimeters(_)) => None,
    }
}

fn distance(words: &[&str]) -> Option<Option<f64>> {
    match quantity(words) {
        None => Some(None),
        Some(Quantity::Plain(d) | Quantity::Centimeters(d)) => Some(Some(round2(d))),
        Some(Quantity::Degrees(_)) => None,
    }
}

fn has(words: &[&str], any: &[&str]) -> bool {
    words.iter().any(|w| any.contains(w))
}

fn phrase(words: &[&str], p: &[&str]) -> bool {
    words.windows(p.len()).any(|w| w == p)
}

fn turn(words: &[&str], left: bool, default: f64) -> Option<Vec<Command>> {
    let a = angle(words, default)?;
    Some(vec![if left { Command::TurnLeft(a) } else { Command::TurnRight(a) }])
}

fn interpret(words: &[&str], multi: bool) -> Option<Clause> {
    let left = has(words, &["left", "counterclockwise", "anticlockwise", "counter-clockwise"]);
    let right = has(words, &["right", "clockwise"]);
    if left && right {
        return None;
    }
    let cmds = if has(words, &["return", "returning"]) || phrase(words, &["come", "back"]) {
        return Some(Clause::Return);
    } else if has(words, &["stop", "halt", "freeze"]) {
        vec![Command::Stop]
    } else if has(words, &["wall", "walls", "ultrasonic", "sensor", "obstacle"]) {
        vec![Command::ForwardUntilWall]
    } else if has(words, &["behind"]) {
        let d = distance(words)?.unwrap_or(DEFAULT_STEP_CM);
        vec![Command::TurnRight(180.0), Command::Forward(Some(d))]
    } else if has(words, &["twirl", "twirls", "spin", "pirouette"]) {
        turn(words, left, 360.0)?
    } else if phrase(words, &["turn", "around"]) || phrase(words, &["about", "face"]) || has(words, &["u-turn"]) {
        turn(words, left, 180.0)?
    } else if left || right {
        turn(words, left, DEFAULT_TURN_DEG)?
    } else if has(words, &["turn", "rotate", "pivot"]) && has(words, &["either", "any", "whichever"]) {
        turn(words, false, DEFAULT_TURN_DEG)?
    } else {
        let forward = has(words, &["forward", "forwards", "ahead", "straight"]);
        let backward = has(words, &["back", "backward", "backwards", "reverse"]);
        if forward == backward {
            return None;
        }
        let d = distance(words)?.or(multi.then_some(DEFAULT_STEP_CM));
        vec![if forward { Command::Forward(d) } else { Command::Backward(d) }]
    };
    Some(Clause::Commands(cmds))
}
