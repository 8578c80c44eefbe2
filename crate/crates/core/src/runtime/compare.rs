//! Compare-agent prompt assembly and output parsing.
//!
//! The compare input is the realizations' raw outputs concatenated in index
//! order, each under `# Problem Solution Realization k`. The expected output
//! layout is described in `prompts/compare_system.md`; anything that does not
//! follow it degrades to a recommendation holding the raw text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;

use crate::problem::{Assessment, Realization, Recommendation};

pub const REALIZATION_HEADER: &str = "# Problem Solution Realization";

/// Concatenates realizations in index order under numbered headers.
pub fn concatenate_realizations(realizations: &[Realization]) -> String {
    let mut sorted: Vec<&Realization> = realizations.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let mut out = String::new();
    for r in sorted {
        let _ = writeln!(out, "{REALIZATION_HEADER} {}", r.index);
        out.push('\n');
        out.push_str(r.raw_output.trim_end());
        out.push_str("\n\n");
    }
    out
}

/// Inverse of [`concatenate_realizations`]: `(index, body)` pairs in input order.
pub fn split_concatenated(text: &str) -> Vec<(usize, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re =
        RE.get_or_init(|| Regex::new(r"(?m)^# Problem Solution Realization (\d+)[ \t]*$").unwrap());
    let heads: Vec<(usize, usize, usize)> = re
        .captures_iter(text)
        .filter_map(|c| {
            let m = c.get(0).unwrap();
            c[1].parse().ok().map(|i| (i, m.start(), m.end()))
        })
        .collect();
    heads
        .iter()
        .enumerate()
        .map(|(k, &(index, _, body_start))| {
            let end = heads.get(k + 1).map_or(text.len(), |h| h.1);
            (index, text[body_start..end].trim().to_owned())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCompare {
    pub recommendation: Recommendation,
    /// Equivalence-class labels compare assigned, keyed by realization index.
    pub labels: BTreeMap<usize, String>,
    pub warnings: Vec<String>,
}

fn section_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?mi)^##[ \t]+(discussion|assessments|recommended solution|secondary opinions)\b.*$",
        )
        .unwrap()
    })
}

fn assessment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?mi)^###[ \t]+Realization[ \t]+(\d+)[ \t]*(?:\[[ \t]*class:[ \t]*([^\]]*?)[ \t]*\])?.*$")
            .unwrap()
    })
}

fn sections(text: &str) -> BTreeMap<String, String> {
    let heads: Vec<(String, usize, usize)> = section_re()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].to_lowercase(), m.start(), m.end())
        })
        .collect();
    let mut out = BTreeMap::new();
    for (k, (name, _, body_start)) in heads.iter().enumerate() {
        let end = heads.get(k + 1).map_or(text.len(), |h| h.1);
        out.entry(name.clone())
            .or_insert_with(|| text[*body_start..end].trim().to_owned());
    }
    out
}

/// Parses compare output for `n` realizations.
pub fn parse_compare_output(raw: &str, n: usize) -> ParsedCompare {
    let mut warnings = Vec::new();
    let secs = sections(raw);
    let recommended = secs
        .get("recommended solution")
        .map(String::as_str)
        .unwrap_or("");
    if recommended.is_empty() {
        warnings.push(
            "compare output lacks a recommended-solution section; keeping the raw text".into(),
        );
        return ParsedCompare {
            recommendation: Recommendation {
                discussion: raw.trim().to_owned(),
                recommended_solution: raw.trim().to_owned(),
                per_realization_assessments: Vec::new(),
                secondary_opinions_noted: Vec::new(),
            },
            labels: BTreeMap::new(),
            warnings,
        };
    }

    let mut per_realization_assessments = Vec::new();
    let mut labels = BTreeMap::new();
    if let Some(body) = secs.get("assessments") {
        let heads: Vec<_> = assessment_re().captures_iter(body).collect();
        for (k, c) in heads.iter().enumerate() {
            let whole = c.get(0).unwrap();
            let end = heads
                .get(k + 1)
                .map_or(body.len(), |h| h.get(0).unwrap().start());
            let text = body[whole.end()..end].trim().to_owned();
            let index: usize = match c[1].parse() {
                Ok(i) if (1..=n).contains(&i) => i,
                _ => {
                    warnings.push(format!(
                        "compare assessed realization {} which does not exist; dropped",
                        &c[1]
                    ));
                    continue;
                }
            };
            if per_realization_assessments
                .iter()
                .any(|a: &Assessment| a.index == index)
            {
                warnings.push(format!(
                    "duplicate assessment of realization {index}; kept the first"
                ));
                continue;
            }
            if let Some(label) = c
                .get(2)
                .map(|m| m.as_str().trim())
                .filter(|l| !l.is_empty())
            {
                labels.insert(index, label.to_owned());
            }
            per_realization_assessments.push(Assessment {
                index,
                assessment: text,
            });
        }
    }
    if labels.len() < n {
        warnings.push(format!(
            "compare assigned equivalence classes to {} of {n} realizations",
            labels.len()
        ));
    }

    let secondary_opinions_noted = secs
        .get("secondary opinions")
        .map(|body| {
            body.lines()
                .map(|l| l.trim().trim_start_matches(['-', '*']).trim())
                .filter(|l| !l.is_empty() && !l.eq_ignore_ascii_case("none"))
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();

    ParsedCompare {
        recommendation: Recommendation {
            discussion: secs.get("discussion").cloned().unwrap_or_default(),
            recommended_solution: recommended.to_owned(),
            per_realization_assessments,
            secondary_opinions_noted,
        },
        labels,
        warnings,
    }
}

/// Formats a recommendation in the layout [`parse_compare_output`] reads.
pub fn format_compare_output(rec: &Recommendation, labels: &BTreeMap<usize, String>) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "## Discussion\n\n{}\n\n## Assessments\n\n",
        rec.discussion.trim()
    );
    for a in &rec.per_realization_assessments {
        match labels.get(&a.index) {
            Some(label) => {
                let _ = writeln!(out, "### Realization {} [class: {label}]", a.index);
            }
            None => {
                let _ = writeln!(out, "### Realization {}", a.index);
            }
        }
        let _ = write!(out, "{}\n\n", a.assessment.trim());
    }
    let _ = write!(
        out,
        "## Recommended Solution\n\n{}\n\n## Secondary Opinions\n\n",
        rec.recommended_solution.trim()
    );
    if rec.secondary_opinions_noted.is_empty() {
        out.push_str("- none\n");
    }
    for s in &rec.secondary_opinions_noted {
        let _ = writeln!(out, "- {}", s.trim());
    }
    out
}
