//! Renders an (article, charge) pair as decision text.

use crate::corpus::LabelCatalog;
use crate::error::{Error, Result};

/// Article name, article content, charge definition, charge name, in that
/// order.
pub const DEFAULT_TEMPLATE: &str =
    "{article_name}. {article_content} {charge_definition} Charge: {charge_name}.";

const PLACEHOLDERS: [&str; 4] = [
    "{article_name}",
    "{article_content}",
    "{charge_definition}",
    "{charge_name}",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LegalDecision {
    pub article_id: u32,
    pub charge_id: u32,
    pub text: String,
}

/// A validated decision template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template(String);

impl Default for Template {
    fn default() -> Self {
        Template(DEFAULT_TEMPLATE.to_string())
    }
}

impl Template {
    /// Each placeholder must appear exactly once, in canonical order.
    pub fn new(format: &str) -> Result<Self> {
        let mut last = 0;
        for p in PLACEHOLDERS {
            let pos = format
                .find(p)
                .filter(|_| format.matches(p).count() == 1)
                .ok_or_else(|| {
                    Error::invalid(format!("decision template must contain {p} exactly once"))
                })?;
            if pos < last {
                return Err(Error::invalid(format!(
                    "decision template places {p} out of order"
                )));
            }
            last = pos;
        }
        Ok(Template(format.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn render(
        &self,
        article_id: u32,
        charge_id: u32,
        catalog: &LabelCatalog,
    ) -> Result<LegalDecision> {
        let article = catalog.article(article_id)?;
        let charge = catalog.charge(charge_id)?;
        let values = [
            article.name.as_str(),
            article.text.as_str(),
            charge.text.as_str(),
            charge.name.as_str(),
        ];
        // Single left-to-right pass so placeholder-like catalog text is
        // never substituted again.
        let mut text =
            String::with_capacity(self.0.len() + values.iter().map(|v| v.len()).sum::<usize>());
        let mut rest = self.0.as_str();
        for (p, v) in PLACEHOLDERS.iter().zip(values) {
            let pos = rest.find(p).expect("validated template");
            text.push_str(&rest[..pos]);
            text.push_str(v);
            rest = &rest[pos + p.len()..];
        }
        text.push_str(rest);
        Ok(LegalDecision {
            article_id,
            charge_id,
            text,
        })
    }
}

/// Renders with the default template.
pub fn render_decision(
    article_id: u32,
    charge_id: u32,
    catalog: &LabelCatalog,
) -> Result<LegalDecision> {
    Template::default().render(article_id, charge_id, catalog)
}
