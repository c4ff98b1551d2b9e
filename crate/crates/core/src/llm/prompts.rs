//! Prompt templates with `{NAME}` placeholders, shipped as data files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::LlmError;

pub mod ids {
    pub const C1_S1: &str = "C1.S1";
    pub const C1_S2: &str = "C1.S2";
    pub const C1_S3: &str = "C1.S3";
    pub const C1_S4: &str = "C1.S4";
    pub const C1_S5: &str = "C1.S5";
    pub const C1_S6: &str = "C1.S6";
    pub const C1_S7: &str = "C1.S7";
    pub const C2_S1: &str = "C2.S1";
    pub const C2_S1_NODIAGRAM: &str = "C2.S1.NODIAGRAM";
    pub const C2_S2: &str = "C2.S2";
    pub const C3_S1: &str = "C3.S1";
    pub const C3_S1_SYNTH: &str = "C3.S1.SYNTH";
    pub const C3_S1_NETFN: &str = "C3.S1.NETFN";
    pub const C3_S2: &str = "C3.S2";
    pub const C3_S3: &str = "C3.S3";
    pub const C3_NOTES: &str = "C3.NOTES";
    pub const C3_LINT: &str = "C3.LINT";
    pub const ADVANCED_MODULES: &str = "ADVANCED_MODULES";
    pub const CONTROL_TRAN: &str = "CONTROL.TRAN";
    pub const CONTROL_AC: &str = "CONTROL.AC";
    pub const EXTRACT: &str = "EXTRACT";
    pub const EXTRACT_RETRY: &str = "EXTRACT.RETRY";
    pub const FEEDBACK: &str = "FEEDBACK";
}

const BUILTIN: &[(&str, &str, &str)] = &[
    (ids::C1_S1, "c1_s1.txt", include_str!("../../prompts/c1_s1.txt")),
    (ids::C1_S2, "c1_s2.txt", include_str!("../../prompts/c1_s2.txt")),
    (ids::C1_S3, "c1_s3.txt", include_str!("../../prompts/c1_s3.txt")),
    (ids::C1_S4, "c1_s4.txt", include_str!("../../prompts/c1_s4.txt")),
    (ids::C1_S5, "c1_s5.txt", include_str!("../../prompts/c1_s5.txt")),
    (ids::C1_S6, "c1_s6.txt", include_str!("../../prompts/c1_s6.txt")),
    (ids::C1_S7, "c1_s7.txt", include_str!("../../prompts/c1_s7.txt")),
    (ids::C2_S1, "c2_s1.txt", include_str!("../../prompts/c2_s1.txt")),
    (
        ids::C2_S1_NODIAGRAM,
        "c2_s1_nodiagram.txt",
        include_str!("../../prompts/c2_s1_nodiagram.txt"),
    ),
    (ids::C2_S2, "c2_s2.txt", include_str!("../../prompts/c2_s2.txt")),
    (ids::C3_S1, "c3_s1.txt", include_str!("../../prompts/c3_s1.txt")),
    (
        ids::C3_S1_SYNTH,
        "c3_s1_synth.txt",
        include_str!("../../prompts/c3_s1_synth.txt"),
    ),
    (
        ids::C3_S1_NETFN,
        "c3_s1_netfn.txt",
        include_str!("../../prompts/c3_s1_netfn.txt"),
    ),
    (ids::C3_S2, "c3_s2.txt", include_str!("../../prompts/c3_s2.txt")),
    (ids::C3_S3, "c3_s3.txt", include_str!("../../prompts/c3_s3.txt")),
    (ids::C3_NOTES, "c3_notes.txt", include_str!("../../prompts/c3_notes.txt")),
    (ids::C3_LINT, "c3_lint.txt", include_str!("../../prompts/c3_lint.txt")),
    (
        ids::ADVANCED_MODULES,
        "advanced_modules.txt",
        include_str!("../../prompts/advanced_modules.txt"),
    ),
    (
        ids::CONTROL_TRAN,
        "control_tran.txt",
        include_str!("../../prompts/control_tran.txt"),
    ),
    (ids::CONTROL_AC, "control_ac.txt", include_str!("../../prompts/control_ac.txt")),
    (ids::EXTRACT, "extract.txt", include_str!("../../prompts/extract.txt")),
    (
        ids::EXTRACT_RETRY,
        "extract_retry.txt",
        include_str!("../../prompts/extract_retry.txt"),
    ),
    (ids::FEEDBACK, "feedback.txt", include_str!("../../prompts/feedback.txt")),
];

/// Spans of `{NAME}` placeholders: an uppercase letter, then uppercase
/// letters, digits or underscores. Other braces are literal text.
fn placeholder_spans(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' && bytes[start].is_ascii_uppercase() {
                out.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required = placeholder_spans(&body)
            .into_iter()
            .map(|(_, _, name)| name.to_string())
            .collect();
        PromptTemplate {
            id: id.into(),
            body,
            required,
        }
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every placeholder in one pass; bound values are not
    /// rescanned. Fails if any placeholder is unbound. Extra bindings are
    /// ignored so an edited template may drop a placeholder.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        let missing: Vec<&str> = self
            .required
            .iter()
            .map(String::as_str)
            .filter(|name| !map.contains_key(name))
            .collect();
        if !missing.is_empty() {
            return Err(LlmError::Template(format!(
                "template {} has unbound placeholder(s): {}",
                self.id,
                missing.join(", ")
            )));
        }
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, name) in placeholder_spans(&self.body) {
            out.push_str(&self.body[last..start]);
            out.push_str(map[name]);
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(out.trim_end().to_string())
    }
}

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        PromptCatalog::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|&(id, _, body)| (id.to_string(), PromptTemplate::new(id, body)))
            .collect();
        PromptCatalog { templates }
    }

    /// Built-in catalog with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, LlmError> {
        let mut catalog = PromptCatalog::builtin();
        for &(id, file, _) in BUILTIN {
            let path = dir.join(file);
            if path.is_file() {
                let body = fs::read_to_string(&path)
                    .map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))?;
                catalog
                    .templates
                    .insert(id.to_string(), PromptTemplate::new(id, body));
            }
        }
        Ok(catalog)
    }

    /// File name a template is read from.
    pub fn file_name(id: &str) -> Option<&'static str> {
        BUILTIN.iter().find(|(i, _, _)| *i == id).map(|(_, f, _)| *f)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, LlmError> {
        self.templates
            .get(id)
            .ok_or_else(|| LlmError::Template(format!("unknown template {id}")))
    }

    pub fn render(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        self.get(id)?.render(bindings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_and_literal_braces() {
        let t = PromptTemplate::new("t", "a {X} b {time > 0 ? 1 : 0} {1e6 * v(p)} {x} {Y_2}");
        assert_eq!(t.required().iter().collect::<Vec<_>>(), ["X", "Y_2"]);
        let out = t.render(&[("X", "{Y_2}"), ("Y_2", "y")]).unwrap();
        assert_eq!(out, "a {Y_2} b {time > 0 ? 1 : 0} {1e6 * v(p)} {x} y");
    }

    #[test]
    fn unbound_placeholder_fails() {
        let t = PromptTemplate::new("C1.S6", "{NUM_COMPONENTS} {TYPE_COMPONENT}");
        let err = t.render(&[("NUM_COMPONENTS", "2")]).unwrap_err();
        assert!(err.to_string().contains("TYPE_COMPONENT"));
    }

    #[test]
    fn every_builtin_renders_with_complete_bindings() {
        let catalog = PromptCatalog::builtin();
        assert_eq!(catalog.ids().count(), BUILTIN.len());
        for id in catalog.ids() {
            let t = catalog.get(id).unwrap();
            let bindings: Vec<(&str, &str)> = t.required().iter().map(|n| (n.as_str(), "value")).collect();
            let out = t.render(&bindings).unwrap();
            assert!(placeholder_spans(&out).is_empty(), "{id} left a placeholder");
            assert!(!out.is_empty());
        }
    }

    #[test]
    fn inset_template_has_the_documented_placeholders() {
        let catalog = PromptCatalog::builtin();
        let req = catalog.get(ids::C1_S6).unwrap().required();
        for name in ["NUM_COMPONENTS", "TYPE_COMPONENT", "RECOGNITION_CONTENT", "BBOX_XYXY"] {
            assert!(req.contains(name), "{name}");
        }
        let req = catalog.get(ids::C2_S1).unwrap().required();
        assert!(req.contains("PROBLEM_STATEMENT") && req.contains("CIRCUIT_INFORMATION"));
    }

    #[test]
    fn overrides_replace_by_file_name() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c2_s2.txt"), "Just the answer, {NAME}.").unwrap();
        let catalog = PromptCatalog::with_overrides(dir.path()).unwrap();
        assert_eq!(catalog.render(ids::C2_S2, &[("NAME", "please")]).unwrap(), "Just the answer, please.");
        assert_eq!(
            catalog.get(ids::C2_S1).unwrap(),
            PromptCatalog::builtin().get(ids::C2_S1).unwrap()
        );
    }
}
