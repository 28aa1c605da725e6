use serde::{Deserialize, Serialize};

use crate::command::GRAMMAR;

/// Instructions and worked examples sent ahead of every utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instructions: String,
    /// (utterance, wire string) pairs.
    pub examples: Vec<(String, String)>,
}

/// A template with one utterance filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub examples: Vec<(String, String)>,
    pub user: String,
}

impl RenderedPrompt {
    /// Single-string form for plain completion endpoints.
    pub fn completion_text(&self) -> String {
        let mut out = self.system.clone();
        out.push_str("\n\n");
        for (input, output) in &self.examples {
            out.push_str(&format!("Input: {input}\nOutput: {output}\n\n"));
        }
        out.push_str(&format!("Input: {}\nOutput:", self.user));
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let instructions = format!(
            "You control a small wheeled robot. Convert the user's request into the closest \
             sequence of robot commands and reply with the command string only, on one line.\n\n\
             Grammar (EBNF):\n{GRAMMAR}\n\n\
             Meaning:\n\
             f,<cm> drive forward <cm> centimeters; f alone drives forward until stopped\n\
             b,<cm> drive backward <cm> centimeters; b alone drives backward until stopped\n\
             l,<deg> turn left in place by <deg> degrees\n\
             r,<deg> turn right in place by <deg> degrees\n\
             s stop the motors\n\
             w drive forward until the ultrasonic sensor detects a wall\n\n\
             Units: distances are centimeters and angles are degrees. \
             Convert other units first (1 foot = 30.48 cm, 1 inch = 2.54 cm, 1 m = 100 cm, \
             pi radians = 180 degrees) and round to 2 decimals."
        );
        Self {
            instructions,
            examples: vec![
                ("Go forward 100cm".into(), "f,100".into()),
                ("turn right 90 degrees".into(), "r,90".into()),
                ("stop".into(), "s".into()),
                ("back up half a meter then face the other way".into(), "b,50;r,180".into()),
            ],
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, utterance: &str) -> RenderedPrompt {
        RenderedPrompt {
            system: self.instructions.clone(),
            examples: self.examples.clone(),
            user: utterance.to_string(),
        }
    }
}
