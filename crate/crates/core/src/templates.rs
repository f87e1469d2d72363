//! Prompt templates. Defaults ship with the crate and can be replaced by
//! files; placeholders are `{name}` and anything else, including JSON
//! braces, passes through untouched.

pub const CATEGORIZE: &str = include_str!("../templates/categorize.txt");
pub const CANONICALIZE: &str = include_str!("../templates/canonicalize.txt");
pub const SCHEMA: &str = include_str!("../templates/schema.txt");
pub const EXTRACT: &str = include_str!("../templates/extract.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("template is missing placeholder {{{placeholder}}}")]
pub struct TemplateError {
    pub placeholder: String,
}

pub fn require(template: &str, placeholders: &[&str]) -> Result<(), TemplateError> {
    for name in placeholders {
        if !template.contains(&format!("{{{name}}}")) {
            return Err(TemplateError {
                placeholder: (*name).to_string(),
            });
        }
    }
    Ok(())
}

/// Replaces each `{name}` with its value and squeezes the blank lines left
/// behind by empty substitutions.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    squeeze_blank_lines(&out)
}

fn squeeze_blank_lines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in text.split('\n') {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    let trimmed = out.trim_matches('\n');
    let mut result = trimmed.to_string();
    if text.ends_with('\n') {
        result.push('\n');
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_their_placeholders() {
        require(CATEGORIZE, &["media", "steering"]).unwrap();
        require(CANONICALIZE, &["categories"]).unwrap();
        require(SCHEMA, &["category"]).unwrap();
        require(EXTRACT, &["schema_block"]).unwrap();
    }

    #[test]
    fn missing_placeholder() {
        let err = require("no slots here", &["media"]).unwrap_err();
        assert_eq!(err.to_string(), "template is missing placeholder {media}");
    }

    #[test]
    fn fill_keeps_json_braces_and_squeezes() {
        let t = "a {x}\n\n{gone}\n\nreply {\"k\": 1}\n";
        assert_eq!(fill(t, &[("x", "1"), ("gone", "")]), "a 1\n\nreply {\"k\": 1}\n");
    }
}
