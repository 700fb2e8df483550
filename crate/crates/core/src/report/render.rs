use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use super::{ClassificationTable, Histogram, SummaryStats, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            other => Err(format!(
                "unknown output format `{other}` (expected csv, json or markdown)"
            )),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Markdown => "markdown",
        })
    }
}

/// Something that can be written out as CSV, JSON or Markdown.
pub trait Render {
    fn csv_records(&self) -> Vec<Vec<String>>;
    fn json(&self) -> Value;
    fn markdown(&self) -> String;
}

pub fn render(item: &impl Render, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => write_csv(&item.csv_records()),
        OutputFormat::Json => pretty(&item.json()),
        OutputFormat::Markdown => item.markdown(),
    }
}

/// Statistics and histogram as one document.
pub fn render_summary(stats: &SummaryStats, hist: &Histogram, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => {
            let mut records = stats.csv_records();
            records.extend(histogram_stat_rows(hist));
            write_csv(&records)
        }
        OutputFormat::Json => {
            let mut doc = stats.json();
            doc["histogram"] = hist.json();
            pretty(&doc)
        }
        OutputFormat::Markdown => format!("{}\n{}", stats.markdown(), hist.markdown()),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

fn write_csv(records: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in records {
        w.write_record(r).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|").replace(['\n', '\r'], " ")
}

/// Pipe table with every column padded to its widest cell.
fn md_table(header: &[&str], rows: &[Vec<String>], right_align: &[bool]) -> String {
    let header: Vec<String> = header.iter().map(|h| md_escape(h)).collect();
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(|c| md_escape(c)).collect())
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count().max(3)).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .zip(right_align)
            .map(|((c, &w), &right)| {
                if right {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    let rule: Vec<String> = widths
        .iter()
        .zip(right_align)
        .map(|(&w, &right)| {
            if right {
                format!("{}:", "-".repeat(w - 1))
            } else {
                "-".repeat(w)
            }
        })
        .collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for r in &rows {
        out.push_str(&line(r));
    }
    out
}

impl Render for ClassificationTable {
    fn csv_records(&self) -> Vec<Vec<String>> {
        let mut out = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect()];
        out.extend(self.rows.iter().map(|r| {
            vec![
                r.paper_id.clone(),
                r.title.clone(),
                r.category_key.clone(),
                r.category_name.clone(),
                format!("{:.6}", r.confidence),
            ]
        }));
        out
    }

    fn json(&self) -> Value {
        serde_json::to_value(&self.rows).expect("rows serialize")
    }

    fn markdown(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.paper_id.clone(),
                    r.title.clone(),
                    r.category_name.clone(),
                    format!("{:.6}", r.confidence),
                ]
            })
            .collect();
        md_table(
            &["id", "title", "category", "confidence"],
            &rows,
            &[false, false, false, true],
        )
    }
}

impl Render for SummaryStats {
    fn csv_records(&self) -> Vec<Vec<String>> {
        let rec = |a: &str, b: &str, c: String| vec![a.to_owned(), b.to_owned(), c];
        let mut out = vec![rec("statistic", "key", "value".into())];
        out.push(rec("total", "", self.total.to_string()));
        for (k, c) in &self.per_category {
            out.push(rec("count", k, c.count.to_string()));
            out.push(rec("fraction", k, c.fraction.to_string()));
        }
        out.push(rec("confidence_min", "", self.confidence.min.to_string()));
        out.push(rec("confidence_max", "", self.confidence.max.to_string()));
        out.push(rec("confidence_mean", "", self.confidence.mean.to_string()));
        out
    }

    fn json(&self) -> Value {
        serde_json::to_value(self).expect("stats serialize")
    }

    fn markdown(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .per_category
            .iter()
            .map(|(k, c)| {
                vec![
                    k.clone(),
                    c.count.to_string(),
                    format!("{:.1}%", c.fraction * 100.0),
                ]
            })
            .collect();
        let mut out = md_table(&["category", "count", "share"], &rows, &[false, true, true]);
        out.push('\n');
        let conf = vec![
            vec!["total".to_owned(), self.total.to_string()],
            vec![
                "confidence min".to_owned(),
                format!("{:.6}", self.confidence.min),
            ],
            vec![
                "confidence max".to_owned(),
                format!("{:.6}", self.confidence.max),
            ],
            vec![
                "confidence mean".to_owned(),
                format!("{:.6}", self.confidence.mean),
            ],
        ];
        out.push_str(&md_table(&["statistic", "value"], &conf, &[false, true]));
        out
    }
}

fn histogram_stat_rows(h: &Histogram) -> Vec<Vec<String>> {
    (0..h.bin_count)
        .map(|i| {
            let (lo, hi) = h.edges(i);
            vec![
                "histogram".to_owned(),
                format!("{lo}-{hi}"),
                h.counts[i].to_string(),
            ]
        })
        .collect()
}

impl Render for Histogram {
    fn csv_records(&self) -> Vec<Vec<String>> {
        let mut out = vec![vec!["bin".into(), "lo".into(), "hi".into(), "count".into()]];
        for i in 0..self.bin_count {
            let (lo, hi) = self.edges(i);
            out.push(vec![
                i.to_string(),
                lo.to_string(),
                hi.to_string(),
                self.counts[i].to_string(),
            ]);
        }
        out
    }

    fn json(&self) -> Value {
        json!({
            "bin_count": self.bin_count,
            "lo": self.lo,
            "hi": self.hi,
            "counts": self.counts,
        })
    }

    fn markdown(&self) -> String {
        let rows: Vec<Vec<String>> = (0..self.bin_count)
            .map(|i| {
                let (lo, hi) = self.edges(i);
                let close = if i + 1 == self.bin_count { ']' } else { ')' };
                vec![
                    format!("[{lo:.2}, {hi:.2}{close}"),
                    self.counts[i].to_string(),
                ]
            })
            .collect();
        md_table(&["bin", "count"], &rows, &[false, true])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CategorySet;
    use crate::report::{histogram, summarize, Classification};

    fn table(confidences: &[f64]) -> ClassificationTable {
        let mut t = ClassificationTable::new(CategorySet::builtin());
        for (i, &c) in confidences.iter().enumerate() {
            t.rows.push(Classification {
                paper_id: format!("p{i}"),
                title: format!("Title, with comma {i}"),
                category_key: "nlp".into(),
                category_name: "NLP and Modeling".into(),
                confidence: c,
            });
        }
        t
    }

    #[test]
    fn one_row_csv_has_two_lines() {
        let out = render(&table(&[0.5]), OutputFormat::Csv);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "id,title,category_key,category_name,confidence");
        assert_eq!(
            lines[1],
            "p0,\"Title, with comma 0\",nlp,NLP and Modeling,0.500000"
        );
    }

    #[test]
    fn stats_json_round_trips() {
        let s = summarize(&table(&[0.5, 0.3, 0.9999999])).unwrap();
        let back: SummaryStats = serde_json::from_str(&render(&s, OutputFormat::Json)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn stats_json_shape() {
        let s = summarize(&table(&[0.5])).unwrap();
        let v: Value = serde_json::from_str(&render(&s, OutputFormat::Json)).unwrap();
        assert_eq!(v["total"], 1);
        assert_eq!(v["per_category"]["nlp"]["count"], 1);
        assert_eq!(v["confidence"]["mean"], 0.5);
    }

    #[test]
    fn table_json_is_lossless() {
        let c = 0.123_456_789_012_345_6;
        let v = table(&[c]).json();
        assert_eq!(v[0]["confidence"].as_f64(), Some(c));
        assert_eq!(v[0]["id"], "p0");
    }

    #[test]
    fn markdown_columns_align() {
        let out = render(&table(&[0.5, 0.25]), OutputFormat::Markdown);
        let widths: Vec<usize> = out.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{out}");
        assert!(out.contains("0.500000"));
    }

    #[test]
    fn summary_document_contains_histogram() {
        let t = table(&[0.5, 0.95]);
        let s = summarize(&t).unwrap();
        let h = histogram(&t.confidences(), 10, 0.0, 1.0).unwrap();
        let v: Value = serde_json::from_str(&render_summary(&s, &h, OutputFormat::Json)).unwrap();
        assert_eq!(v["histogram"]["counts"][9], 1);
        let csv = render_summary(&s, &h, OutputFormat::Csv);
        assert!(csv.starts_with("statistic,key,value\n"));
        assert_eq!(
            csv.lines().filter(|l| l.starts_with("histogram,")).count(),
            10
        );
    }

    #[test]
    fn format_parsing() {
        assert_eq!("JSON".parse::<OutputFormat>(), Ok(OutputFormat::Json));
        assert_eq!("md".parse::<OutputFormat>(), Ok(OutputFormat::Markdown));
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
