//! Thread corpus I/O: the SemEval-2015 Task 3 XML format (read), label
//! mapping onto the three answer classes, dataset statistics, and a lossless
//! line-delimited canonical format (read/write).

use std::io::{BufRead, Write};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::lstm::Label;

/// Longest answer sequence kept per thread; longer threads are truncated
/// with a warning to bound backpropagation length.
pub const MAX_ANSWERS_PER_THREAD: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub id: String,
    pub text: String,
    /// None only when parsing unlabeled data for prediction.
    pub gold: Option<Label>,
    /// Source annotation, preserved verbatim.
    pub raw_label: String,
}

/// One question with its chronologically ordered answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Thread {
    pub qid: String,
    pub question: String,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseWarnings {
    pub skipped_missing_gold: usize,
    pub unknown_labels: usize,
    pub truncated_threads: usize,
    pub empty_threads: usize,
}

#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub threads: Vec<Thread>,
    pub warnings: ParseWarnings,
}

/// Case-insensitive mapping of source annotations onto the three classes.
/// Dialogue / Not English / Other group into Bad; unknown labels map to Bad
/// (callers count them via `map_label_checked`). Total and idempotent on its
/// own output names.
pub fn map_label(raw: &str) -> Label {
    map_label_checked(raw).0
}

/// As `map_label`, also reporting whether the label was recognized.
pub fn map_label_checked(raw: &str) -> (Label, bool) {
    let norm = raw.trim().to_lowercase();
    match norm.as_str() {
        "good" => (Label::Good, true),
        "potential" => (Label::Potential, true),
        "bad" | "dialogue" | "not english" | "other" => (Label::Bad, true),
        _ => (Label::Bad, false),
    }
}

/// Parses the task XML: `Question` elements holding `QSubject`/`QBody` and
/// `Comment` children with a `CGOLD` annotation. Question text is subject
/// plus body. Comments keep document order. Comments without a gold
/// annotation are skipped (counted) unless `require_gold` is false.
pub fn parse_semeval_xml(path: &Path) -> Result<ParsedCorpus> {
    parse_semeval_xml_with(path, true)
}

pub fn parse_semeval_xml_with(path: &Path, require_gold: bool) -> Result<ParsedCorpus> {
    let mut reader = Reader::from_file(path).map_err(|e| Error::Xml {
        offset: 0,
        msg: format!("{}: {e}", path.display()),
    })?;
    parse_events(&mut reader, require_gold)
}

/// Parse from an in-memory string (used by tests and conversion).
pub fn parse_semeval_str(xml: &str, require_gold: bool) -> Result<ParsedCorpus> {
    let mut reader = Reader::from_str(xml);
    parse_events(&mut reader, require_gold)
}

struct PendingQuestion {
    qid: String,
    subject: String,
    body: String,
    answers: Vec<Answer>,
}

struct PendingComment {
    cid: String,
    gold: Option<String>,
    subject: String,
    body: String,
}

fn parse_events<R: BufRead>(reader: &mut Reader<R>, require_gold: bool) -> Result<ParsedCorpus> {
    let mut threads = Vec::new();
    let mut warnings = ParseWarnings::default();

    let mut question: Option<PendingQuestion> = None;
    let mut comment: Option<PendingComment> = None;
    // Which text element we are inside, if any.
    let mut text_target: Option<&'static str> = None;

    let mut buf = Vec::new();
    loop {
        let position = reader.buffer_position();
        let event = reader.read_event_into(&mut buf).map_err(|e| Error::Xml {
            offset: position,
            msg: e.to_string(),
        })?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_string();
                let is_empty = matches!(event, Event::Empty(_));
                match name.as_str() {
                    "Question" => {
                        let mut qid = String::new();
                        for attr in e.attributes().flatten() {
                            if attr.key.local_name().as_ref() == b"QID" {
                                qid = attr_value(&attr)?;
                            }
                        }
                        question = Some(PendingQuestion {
                            qid,
                            subject: String::new(),
                            body: String::new(),
                            answers: Vec::new(),
                        });
                    }
                    "Comment" => {
                        let mut cid = String::new();
                        let mut gold = None;
                        for attr in e.attributes().flatten() {
                            let key = attr.key.local_name();
                            match key.as_ref() {
                                b"CID" => cid = attr_value(&attr)?,
                                b"CGOLD" => gold = Some(attr_value(&attr)?),
                                _ => {}
                            }
                        }
                        comment = Some(PendingComment {
                            cid,
                            gold,
                            subject: String::new(),
                            body: String::new(),
                        });
                        if is_empty {
                            finish_comment(
                                comment.take().unwrap(),
                                question.as_mut(),
                                require_gold,
                                &mut warnings,
                            );
                        }
                    }
                    "QSubject" if !is_empty => text_target = Some("qsubject"),
                    "QBody" if !is_empty => text_target = Some("qbody"),
                    "CSubject" if !is_empty => text_target = Some("csubject"),
                    "CBody" if !is_empty => text_target = Some("cbody"),
                    _ => {}
                }
            }
            Event::Text(ref t) => {
                if let Some(target) = text_target {
                    let text = t.decode().map_err(|e| Error::Xml {
                        offset: position,
                        msg: e.to_string(),
                    })?;
                    let text = quick_xml::escape::unescape(&text)
                        .map(|c| c.into_owned())
                        .unwrap_or_else(|_| text.into_owned());
                    match (target, question.as_mut(), comment.as_mut()) {
                        ("qsubject", Some(q), _) => q.subject.push_str(&text),
                        ("qbody", Some(q), _) => q.body.push_str(&text),
                        ("csubject", _, Some(c)) => c.subject.push_str(&text),
                        ("cbody", _, Some(c)) => c.body.push_str(&text),
                        _ => {}
                    }
                }
            }
            Event::End(ref e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_string();
                match name.as_str() {
                    "QSubject" | "QBody" | "CSubject" | "CBody" => text_target = None,
                    "Comment" => {
                        if let Some(c) = comment.take() {
                            finish_comment(c, question.as_mut(), require_gold, &mut warnings);
                        }
                    }
                    "Question" => {
                        if let Some(mut q) = question.take() {
                            if q.answers.len() > MAX_ANSWERS_PER_THREAD {
                                q.answers.truncate(MAX_ANSWERS_PER_THREAD);
                                warnings.truncated_threads += 1;
                            }
                            if q.answers.is_empty() {
                                warnings.empty_threads += 1;
                            } else {
                                let question_text = join_nonempty(&q.subject, &q.body);
                                threads.push(Thread {
                                    qid: q.qid,
                                    question: question_text,
                                    answers: q.answers,
                                });
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    Ok(ParsedCorpus { threads, warnings })
}

fn finish_comment(
    c: PendingComment,
    question: Option<&mut PendingQuestion>,
    require_gold: bool,
    warnings: &mut ParseWarnings,
) {
    let Some(q) = question else { return };
    let text = join_nonempty(&c.subject, &c.body);
    match c.gold {
        Some(raw) => {
            let (label, known) = map_label_checked(&raw);
            if !known {
                warnings.unknown_labels += 1;
            }
            q.answers.push(Answer {
                id: c.cid,
                text,
                gold: Some(label),
                raw_label: raw,
            });
        }
        None if require_gold => warnings.skipped_missing_gold += 1,
        None => q.answers.push(Answer {
            id: c.cid,
            text,
            gold: None,
            raw_label: String::new(),
        }),
    }
}

fn attr_value(attr: &quick_xml::events::attributes::Attribute<'_>) -> Result<String> {
    attr.unescape_value()
        .map(|v| v.into_owned())
        .map_err(|e| Error::Xml {
            offset: 0,
            msg: format!("bad attribute: {e}"),
        })
}

fn join_nonempty(a: &str, b: &str) -> String {
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() {
        b.to_string()
    } else if b.is_empty() {
        a.to_string()
    } else {
        format!("{a} {b}")
    }
}

/// Corpus-level counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub questions: usize,
    pub answers: usize,
    /// Mean answers per question in hundredths, truncated — integer math so
    /// the two-decimal presentation is exact.
    pub mean_hundredths: u64,
}

impl CorpusStats {
    pub fn mean(&self) -> f64 {
        self.mean_hundredths as f64 / 100.0
    }

    pub fn mean_display(&self) -> String {
        format!("{}.{:02}", self.mean_hundredths / 100, self.mean_hundredths % 100)
    }
}

pub fn dataset_stats(threads: &[Thread]) -> CorpusStats {
    let questions = threads.len();
    let answers: usize = threads.iter().map(|t| t.answers.len()).sum();
    let mean_hundredths = if questions == 0 {
        0
    } else {
        (answers as u64 * 100) / questions as u64
    };
    CorpusStats {
        questions,
        answers,
        mean_hundredths,
    }
}

/// Percentage of answers per class (Good, Bad, Potential), over labeled
/// answers only.
pub fn class_proportions(threads: &[Thread]) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for t in threads {
        for a in &t.answers {
            if let Some(l) = a.gold {
                counts[l.index()] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; 3];
    }
    [
        100.0 * counts[0] as f64 / total as f64,
        100.0 * counts[1] as f64 / total as f64,
        100.0 * counts[2] as f64 / total as f64,
    ]
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(other) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown escape '\\{other}'"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line,
                    msg: "dangling backslash".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Writes threads in the canonical line-delimited format: one thread per
/// line, tab-separated fields `qid, qtext, n, (aid, atext, raw, mapped)*n`,
/// with backslash escapes for backslash, tab, and newline. UTF-8.
pub fn to_canonical<W: Write>(threads: &[Thread], out: &mut W) -> Result<()> {
    for t in threads {
        let mut fields: Vec<String> = vec![
            escape_field(&t.qid),
            escape_field(&t.question),
            t.answers.len().to_string(),
        ];
        for a in &t.answers {
            fields.push(escape_field(&a.id));
            fields.push(escape_field(&a.text));
            fields.push(escape_field(&a.raw_label));
            fields.push(a.gold.map(|l| l.name().to_string()).unwrap_or_else(|| "-".into()));
        }
        writeln!(out, "{}", fields.join("\t"))
            .map_err(|e| Error::io("<canonical output>", e))?;
    }
    Ok(())
}

/// Reads the canonical format back. Inverse of `to_canonical`.
pub fn from_canonical<R: BufRead>(reader: R) -> Result<Vec<Thread>> {
    let mut threads = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        let qid = unescape_field(fields[0], lineno)?;
        let question = unescape_field(fields[1], lineno)?;
        let n: usize = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad answer count '{}'", fields[2]),
        })?;
        if fields.len() != 3 + 4 * n {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields for {} answers, got {}", 3 + 4 * n, n, fields.len()),
            });
        }
        let mut answers = Vec::with_capacity(n);
        for k in 0..n {
            let base = 3 + 4 * k;
            let mapped = fields[base + 3];
            let gold = match mapped {
                "-" => None,
                "Good" => Some(Label::Good),
                "Bad" => Some(Label::Bad),
                "Potential" => Some(Label::Potential),
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bad mapped label '{other}'"),
                    })
                }
            };
            answers.push(Answer {
                id: unescape_field(fields[base], lineno)?,
                text: unescape_field(fields[base + 1], lineno)?,
                gold,
                raw_label: unescape_field(fields[base + 2], lineno)?,
            });
        }
        threads.push(Thread {
            qid,
            question,
            answers,
        });
    }
    Ok(threads)
}

/// Renders threads back to the task XML shape (used by format conversion).
pub fn to_semeval_xml(threads: &[Thread]) -> String {
    let esc = |s: &str| -> String {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
            .replace('"', "&quot;")
    };
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<root>\n");
    for t in threads {
        out.push_str(&format!("<Question QID=\"{}\">\n", esc(&t.qid)));
        out.push_str(&format!("<QSubject></QSubject>\n<QBody>{}</QBody>\n", esc(&t.question)));
        for a in &t.answers {
            match (&a.gold, a.raw_label.is_empty()) {
                (Some(_), false) => out.push_str(&format!(
                    "<Comment CID=\"{}\" CGOLD=\"{}\">\n",
                    esc(&a.id),
                    esc(&a.raw_label)
                )),
                (Some(l), true) => out.push_str(&format!(
                    "<Comment CID=\"{}\" CGOLD=\"{}\">\n",
                    esc(&a.id),
                    l.name()
                )),
                (None, _) => out.push_str(&format!("<Comment CID=\"{}\">\n", esc(&a.id))),
            }
            out.push_str(&format!(
                "<CSubject></CSubject>\n<CBody>{}</CBody>\n</Comment>\n",
                esc(&a.text)
            ));
        }
        out.push_str("</Question>\n");
    }
    out.push_str("</root>\n");
    out
}
