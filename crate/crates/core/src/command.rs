//! The robot command language.
//!
//! Wire form, as produced by the translators and consumed by the driver:
//!
//! ```text
//! sequence  = command , { ";" , command } ;
//! command   = ( "f" | "b" ) , [ "," , number ]
//!           | ( "l" | "r" ) , "," , number
//!           | "s"
//!           | "w" ;
//! number    = digit , { digit } , [ "." , digit , { digit } ] ;
//! ```
//!
//! Letters are case-insensitive and whitespace is allowed around every token.
//! Magnitudes are centimeters for `f`/`b` and degrees for `l`/`r`. A bare `f`
//! or `b` moves until stopped; `w` drives forward until the range sensor sees
//! a wall; `s` stops the motors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// EBNF of the wire form, as embedded in translator prompts.
pub const GRAMMAR: &str = r#"sequence = command , { ";" , command } ;
command  = ( "f" | "b" ) , [ "," , number ]
         | ( "l" | "r" ) , "," , number
         | "s"
         | "w" ;
number   = digit , { digit } , [ "." , digit , { digit } ] ;"#;

/// One robot command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    /// Drive forward `Some(cm)`, or indefinitely when `None`.
    Forward(Option<f64>),
    /// Drive backward `Some(cm)`, or indefinitely when `None`.
    Backward(Option<f64>),
    /// Rotate in place counter-clockwise by the given degrees.
    TurnLeft(f64),
    /// Rotate in place clockwise by the given degrees.
    TurnRight(f64),
    Stop,
    /// Drive forward until the filtered range reading drops to the wall threshold.
    ForwardUntilWall,
}

impl Command {
    pub fn verb(&self) -> char {
        match self {
            Command::Forward(_) => 'f',
            Command::Backward(_) => 'b',
            Command::TurnLeft(_) => 'l',
            Command::TurnRight(_) => 'r',
            Command::Stop => 's',
            Command::ForwardUntilWall => 'w',
        }
    }

    pub fn magnitude(&self) -> Option<f64> {
        match *self {
            Command::Forward(m) | Command::Backward(m) => m,
            Command::TurnLeft(a) | Command::TurnRight(a) => Some(a),
            Command::Stop | Command::ForwardUntilWall => None,
        }
    }

    pub fn is_turn(&self) -> bool {
        matches!(self, Command::TurnLeft(_) | Command::TurnRight(_))
    }

    fn check(&self) -> Result<(), InvalidCommand> {
        match self.magnitude() {
            Some(m) if !m.is_finite() || m < 0.0 => Err(InvalidCommand(*self)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.verb())?;
        if let Some(m) = self.magnitude() {
            // f64's Display is the shortest representation that round-trips
            // and never uses exponent notation.
            write!(f, ",{m}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("command {0:?} has a negative or non-finite magnitude")]
pub struct InvalidCommand(pub Command);

/// A non-empty, ordered list of commands.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSequence(Vec<Command>);

impl CommandSequence {
    pub fn new(commands: Vec<Command>) -> Result<Self, SequenceError> {
        if commands.is_empty() {
            return Err(SequenceError::Empty);
        }
        for c in &commands {
            c.check()?;
        }
        Ok(Self(commands))
    }

    pub fn single(command: Command) -> Result<Self, SequenceError> {
        Self::new(vec![command])
    }

    pub fn commands(&self) -> &[Command] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Command> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<Command> {
        self.0
    }
}

impl<'a> IntoIterator for &'a CommandSequence {
    type Item = &'a Command;
    type IntoIter = std::slice::Iter<'a, Command>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("a command sequence needs at least one command")]
    Empty,
    #[error(transparent)]
    Invalid(#[from] InvalidCommand),
}

impl fmt::Display for CommandSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for CommandSequence {
    type Err = ParseDiagnostic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_sequence(s)
    }
}

impl Serialize for CommandSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize(self))
    }
}

impl<'de> Deserialize<'de> for CommandSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_sequence(&text).map_err(serde::de::Error::custom)
    }
}

/// Where and why parsing stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("at byte {position}: expected {expected}, found {found}")]
pub struct ParseDiagnostic {
    /// Byte offset into the input; equal to the input length at end of input.
    pub position: usize,
    pub expected: String,
    pub found: String,
}

/// Canonical wire form: lowercase, no whitespace, `;`-separated, shortest
/// magnitudes.
pub fn serialize(seq: &CommandSequence) -> String {
    seq.to_string()
}

pub fn parse_sequence(text: &str) -> Result<CommandSequence, ParseDiagnostic> {
    let mut parser = Parser { src: text.as_bytes(), pos: 0 };
    let mut commands = Vec::new();
    loop {
        commands.push(parser.command()?);
        parser.skip_ws();
        match parser.peek() {
            None => break,
            Some(b';') => parser.pos += 1,
            Some(_) => return Err(parser.unexpected("';' or end of input")),
        }
    }
    Ok(CommandSequence(commands))
}

/// Result of [`validate`]: the verdict plus whatever diagnostics explain it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Validation {
    pub valid: bool,
    pub diagnostics: Vec<ParseDiagnostic>,
}

pub fn validate(text: &str) -> Validation {
    match parse_sequence(text) {
        Ok(_) => Validation { valid: true, diagnostics: Vec::new() },
        Err(d) => Validation { valid: false, diagnostics: vec![d] },
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn unexpected(&self, expected: &str) -> ParseDiagnostic {
        ParseDiagnostic {
            position: self.pos,
            expected: expected.to_string(),
            found: self.lexeme(),
        }
    }

    /// The token starting at the current position, for diagnostics.
    fn lexeme(&self) -> String {
        let rest = &self.src[self.pos..];
        if rest.is_empty() {
            return "end of input".to_string();
        }
        if !rest[0].is_ascii() {
            // Show the whole offending character rather than one raw byte.
            let ch = String::from_utf8_lossy(rest).chars().next().unwrap_or('\u{fffd}');
            return format!("{ch:?}");
        }
        let len = if rest[0].is_ascii_alphanumeric() || rest[0] == b'.' {
            rest.iter()
                .take_while(|b| b.is_ascii_alphanumeric() || **b == b'.')
                .count()
        } else {
            1
        };
        format!("{:?}", String::from_utf8_lossy(&rest[..len]))
    }

    fn command(&mut self) -> Result<Command, ParseDiagnostic> {
        self.skip_ws();
        let verb_at = self.pos;
        let verb = match self.peek() {
            Some(b) if b.is_ascii_alphabetic() => b.to_ascii_lowercase(),
            _ => return Err(self.unexpected("a command verb (f, b, l, r, s, w)")),
        };
        // A verb is a single letter; "fly" must not parse as "f" + junk.
        if matches!(self.src.get(verb_at + 1), Some(b) if b.is_ascii_alphanumeric())
            || !b"fblrsw".contains(&verb)
        {
            return Err(self.unexpected("a command verb (f, b, l, r, s, w)"));
        }
        self.pos += 1;

        match verb {
            b's' => Ok(Command::Stop),
            b'w' => Ok(Command::ForwardUntilWall),
            b'f' | b'b' => {
                let magnitude = if self.at_comma() { Some(self.magnitude()?) } else { None };
                Ok(if verb == b'f' {
                    Command::Forward(magnitude)
                } else {
                    Command::Backward(magnitude)
                })
            }
            _ => {
                if !self.at_comma() {
                    return Err(self.unexpected("',' followed by an angle in degrees"));
                }
                let angle = self.magnitude()?;
                Ok(if verb == b'l' {
                    Command::TurnLeft(angle)
                } else {
                    Command::TurnRight(angle)
                })
            }
        }
    }

    /// Consumes optional whitespace and a comma if one follows.
    fn at_comma(&mut self) -> bool {
        let save = self.pos;
        self.skip_ws();
        if self.peek() == Some(b',') {
            self.pos += 1;
            true
        } else {
            self.pos = save;
            false
        }
    }

    fn magnitude(&mut self) -> Result<f64, ParseDiagnostic> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let from = p.pos;
            while matches!(p.peek(), Some(b) if b.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - from
        };
        if digits(self) == 0 {
            return Err(self.unexpected("a non-negative number"));
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            if digits(self) == 0 {
                return Err(self.unexpected("digits after '.'"));
            }
        }
        if matches!(self.peek(), Some(b) if b.is_ascii_alphabetic() || b == b'.') {
            return Err(self.unexpected("end of number"));
        }
        // Only ASCII digits and '.' were consumed.
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let value: f64 = text.parse().expect("grammar-checked decimal");
        if !value.is_finite() {
            return Err(ParseDiagnostic {
                position: start,
                expected: "a finite number".to_string(),
                found: format!("{text:?}"),
            });
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(cmds: Vec<Command>) -> CommandSequence {
        CommandSequence::new(cmds).unwrap()
    }

    #[test]
    fn parses_the_basic_forward_command() {
        assert_eq!(parse_sequence("f,100").unwrap(), seq(vec![Command::Forward(Some(100.0))]));
    }

    #[test]
    fn empty_input_fails_at_zero() {
        let err = parse_sequence("").unwrap_err();
        assert_eq!(err.position, 0);
        assert_eq!(err.found, "end of input");
    }

    #[test]
    fn twirl_then_wall() {
        let parsed = parse_sequence("r,360;w").unwrap();
        assert_eq!(parsed, seq(vec![Command::TurnRight(360.0), Command::ForwardUntilWall]));
        assert_eq!(parse_sequence(&serialize(&parsed)).unwrap(), parsed);
    }

    #[test]
    fn serializes_canonically() {
        assert_eq!(serialize(&seq(vec![Command::Forward(Some(100.0))])), "f,100");
        assert_eq!(serialize(&seq(vec![Command::Stop])), "s");
        let s = seq(vec![Command::TurnLeft(180.0), Command::Backward(Some(25.5))]);
        assert_eq!(serialize(&s), "l,180;b,25.5");
        assert_eq!(parse_sequence("l,180;b,25.5").unwrap(), s);
    }

    #[test]
    fn whitespace_and_case_are_tolerated() {
        let parsed = parse_sequence("  F , 60.96 ;\tL,90 ; s ").unwrap();
        assert_eq!(serialize(&parsed), "f,60.96;l,90;s");
    }

    #[test]
    fn validate_matches_examples() {
        assert!(validate("f,100").valid);
        let v = validate("fly,100");
        assert!(!v.valid);
        assert_eq!(v.diagnostics[0].position, 0);
        assert!(validate("f,450;f,10").valid);
    }

    #[test]
    fn indefinite_motion_but_not_indefinite_turns() {
        assert_eq!(parse_sequence("f").unwrap().commands(), &[Command::Forward(None)]);
        assert_eq!(parse_sequence("b").unwrap().commands(), &[Command::Backward(None)]);
        let err = parse_sequence("l").unwrap_err();
        assert_eq!(err.position, 1);
        assert!(parse_sequence("r;s").is_err());
    }

    #[test]
    fn rejects_malformed_numbers_and_separators() {
        for (bad, pos) in [
            ("f,", 2),
            ("f,-5", 2),
            ("f,1.", 4),
            ("f,.5", 2),
            ("f,10cm", 4),
            ("f,100;", 6),
            ("f,100 s", 6),
            ("s,5", 1),
            ("w,5", 1),
            (";", 0),
            ("x", 0),
        ] {
            let err = parse_sequence(bad).unwrap_err();
            assert_eq!(err.position, pos, "{bad:?}: {err}");
        }
    }

    #[test]
    fn non_ascii_input_is_a_diagnostic() {
        let err = parse_sequence("f,100;é").unwrap_err();
        assert_eq!(err.position, 6);
        assert_eq!(err.found, "'é'");
    }

    #[test]
    fn huge_magnitude_is_rejected() {
        let text = format!("f,{}", "9".repeat(400));
        let err = parse_sequence(&text).unwrap_err();
        assert_eq!(err.expected, "a finite number");
    }

    #[test]
    fn sequence_constructor_enforces_invariants() {
        assert_eq!(CommandSequence::new(vec![]), Err(SequenceError::Empty));
        assert!(CommandSequence::single(Command::TurnLeft(-1.0)).is_err());
        assert!(CommandSequence::single(Command::Forward(Some(f64::NAN))).is_err());
    }

    #[test]
    fn serde_uses_the_wire_form() {
        let s = seq(vec![Command::TurnRight(360.0), Command::ForwardUntilWall]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"r,360;w\"");
        let back: CommandSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
