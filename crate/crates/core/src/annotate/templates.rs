use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Step;

pub const FILES: [&str; 6] = [
    "step1_presence.txt",
    "step2_legibility.txt",
    "step3_orientation.txt",
    "step4_multiplicity.txt",
    "step5_content.txt",
    "step6_description.txt",
];

/// Prompt text for each protocol step. Placeholders in braces are filled
/// from [`PromptContext`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub steps: [String; 6],
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            steps: [
                include_str!("../../templates/step1_presence.txt").to_string(),
                include_str!("../../templates/step2_legibility.txt").to_string(),
                include_str!("../../templates/step3_orientation.txt").to_string(),
                include_str!("../../templates/step4_multiplicity.txt").to_string(),
                include_str!("../../templates/step5_content.txt").to_string(),
                include_str!("../../templates/step6_description.txt").to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PromptContext<'a> {
    pub marking_id: &'a str,
    pub seizure: u32,
    /// 1-based sub-marking index, and the number of sub-markings.
    pub index: u32,
    pub count: u32,
}

impl PromptTemplates {
    /// Reads templates from `dir`, falling back to the bundled text for any
    /// file that is absent.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (slot, name) in t.steps.iter_mut().zip(FILES) {
            match fs::read_to_string(dir.join(name)) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(t)
    }

    /// Writes the templates out, for editing.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (text, name) in self.steps.iter().zip(FILES) {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    /// The prompt for `step`. The content call carries both the
    /// transcription and the style description templates.
    pub fn render(&self, step: Step, ctx: &PromptContext<'_>) -> String {
        let raw = match step {
            Step::Presence => self.steps[0].clone(),
            Step::Legibility => self.steps[1].clone(),
            Step::Orientation => self.steps[2].clone(),
            Step::Multiplicity => self.steps[3].clone(),
            Step::Content(_) => format!("{}\n{}", self.steps[4].trim_end(), self.steps[5]),
        };
        raw.replace("{marking_id}", ctx.marking_id)
            .replace("{seizure}", &ctx.seizure.to_string())
            .replace("{index}", &ctx.index.to_string())
            .replace("{count}", &ctx.count.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_are_filled() {
        let t = PromptTemplates::default();
        let ctx = PromptContext {
            marking_id: "mk-1",
            seizure: 8,
            index: 2,
            count: 3,
        };
        let p = t.render(Step::Presence, &ctx);
        assert!(p.contains("mk-1") && p.contains("seizure 8"));
        let c = t.render(Step::Content(1), &ctx);
        assert!(c.contains("marking 2 of 3"));
        assert!(c.contains("description:"));
        assert!(!c.contains('{') || !c.contains("{index}"));
    }

    #[test]
    fn partial_override_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(FILES[0]), "custom {marking_id}").unwrap();
        let t = PromptTemplates::load(dir.path()).unwrap();
        assert_eq!(t.steps[0], "custom {marking_id}");
        assert_eq!(t.steps[1], PromptTemplates::default().steps[1]);
        let out = tempfile::tempdir().unwrap();
        t.write(out.path()).unwrap();
        assert_eq!(PromptTemplates::load(out.path()).unwrap(), t);
    }
}
