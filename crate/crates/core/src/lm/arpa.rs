//! ARPA text format.
//!
//! Metadata is written as `## key: value` lines ahead of `\data\` and read
//! back from the same place; everything else before `\data\` is ignored.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lm::model::{BackoffLm, NgramEntry};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, UNK};

pub fn write_arpa<W: Write>(lm: &BackoffLm, mut sink: W) -> Result<()> {
    for (key, value) in lm.metadata() {
        writeln!(sink, "## {key}: {value}")?;
    }
    writeln!(sink, "\\data\\")?;
    for k in 1..=lm.order() {
        writeln!(sink, "ngram {k}={}", lm.num_ngrams(k))?;
    }
    let vocab = lm.vocab();
    for k in 1..=lm.order() {
        writeln!(sink)?;
        writeln!(sink, "\\{k}-grams:")?;
        for (gram, entry) in lm.sorted_ngrams(k) {
            write!(sink, "{:.6}\t", entry.log_prob)?;
            for (i, &id) in gram.iter().enumerate() {
                if i > 0 {
                    sink.write_all(b" ")?;
                }
                sink.write_all(vocab.token(id).as_bytes())?;
            }
            if let Some(bo) = entry.backoff {
                write!(sink, "\t{bo:.6}")?;
            }
            writeln!(sink)?;
        }
    }
    writeln!(sink)?;
    writeln!(sink, "\\end\\")?;
    Ok(())
}

struct RawEntry {
    line: usize,
    tokens: Vec<String>,
    log_prob: f64,
    backoff: Option<f64>,
}

struct RawModel {
    metadata: Vec<(String, String)>,
    sections: Vec<Vec<RawEntry>>,
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("non-numeric field {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_raw<R: BufRead>(source: R) -> Result<RawModel> {
    let mut lines = source.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut metadata = Vec::new();
    let mut last_line = 0;

    // Preamble.
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(Error::parse(last_line, "missing \\data\\ header"));
        };
        let line = line?;
        last_line = n;
        let t = line.trim();
        if t == "\\data\\" {
            break;
        }
        if let Some(rest) = t.strip_prefix("## ") {
            if let Some((k, v)) = rest.split_once(": ") {
                metadata.push((k.to_string(), v.to_string()));
            }
        }
    }

    // Declared counts.
    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (n, line) in lines.by_ref() {
        let line = line?;
        last_line = n;
        let t = line.trim();
        if t.is_empty() {
            if declared.is_empty() {
                continue;
            }
            break;
        }
        if t.starts_with('\\') {
            pending = Some((n, t.to_string()));
            break;
        }
        let rest = t
            .strip_prefix("ngram ")
            .ok_or_else(|| Error::parse(n, format!("expected 'ngram k=count', got {t:?}")))?;
        let (k, c) = rest
            .split_once('=')
            .ok_or_else(|| Error::parse(n, "malformed ngram count line"))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::parse(n, "non-numeric n-gram order"))?;
        let c: usize = c
            .trim()
            .parse()
            .map_err(|_| Error::parse(n, "non-numeric n-gram count"))?;
        if k != declared.len() + 1 {
            return Err(Error::parse(n, format!("unexpected order {k} in counts")));
        }
        declared.push(c);
    }
    if declared.is_empty() {
        return Err(Error::parse(last_line, "no n-gram counts declared"));
    }
    let order = declared.len();

    let mut sections: Vec<Vec<RawEntry>> = Vec::with_capacity(order);
    let mut current: Option<usize> = None;
    let mut ended = false;
    let mut process = |n: usize, t: &str, sections: &mut Vec<Vec<RawEntry>>| -> Result<bool> {
        if t.is_empty() {
            return Ok(false);
        }
        if t == "\\end\\" {
            if let Some(k) = current {
                if sections[k - 1].len() != declared[k - 1] {
                    return Err(Error::parse(n, format!("{k}-gram count mismatch")));
                }
            }
            return Ok(true);
        }
        if t.starts_with('\\') {
            let k: usize = t
                .strip_prefix('\\')
                .and_then(|s| s.strip_suffix("-grams:"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(n, format!("malformed section header {t:?}")))?;
            let expected = current.map_or(1, |c| c + 1);
            if k != expected || k > order {
                return Err(Error::parse(n, format!("unexpected section \\{k}-grams:")));
            }
            if let Some(c) = current {
                if sections[c - 1].len() != declared[c - 1] {
                    return Err(Error::parse(n, format!("{c}-gram count mismatch")));
                }
            }
            sections.push(Vec::new());
            current = Some(k);
            return Ok(false);
        }
        let k = current.ok_or_else(|| Error::parse(n, "entry outside any section"))?;
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(Error::parse(n, format!("expected {k} tokens")));
        }
        let log_prob = parse_f64(fields[0], n)?;
        let backoff = match fields.get(k + 1) {
            Some(f) => {
                if k == order {
                    return Err(Error::parse(n, "backoff weight on highest order"));
                }
                Some(parse_f64(f, n)?)
            }
            None => None,
        };
        sections[k - 1].push(RawEntry {
            line: n,
            tokens: fields[1..=k].iter().map(|s| s.to_string()).collect(),
            log_prob,
            backoff,
        });
        Ok(false)
    };
    if let Some((n, t)) = pending {
        ended = process(n, &t, &mut sections)?;
    }
    if !ended {
        for (n, line) in lines.by_ref() {
            let line = line?;
            last_line = n;
            if process(n, line.trim(), &mut sections)? {
                ended = true;
                break;
            }
        }
    }
    if !ended {
        return Err(Error::parse(last_line, "missing \\end\\"));
    }
    if sections.len() != order {
        return Err(Error::parse(last_line, "missing n-gram sections"));
    }
    Ok(RawModel { metadata, sections })
}

fn build(raw: RawModel, vocab: Arc<Vocabulary>) -> Result<BackoffLm> {
    let order = raw.sections.len();
    let mut lm = BackoffLm::new(vocab.clone(), order)?;
    for (key, value) in raw.metadata {
        lm.set_meta(key, value);
    }
    for section in raw.sections {
        for e in section {
            let gram: Vec<TokenId> = e
                .tokens
                .iter()
                .map(|t| {
                    vocab.id(t).ok_or_else(|| {
                        Error::parse(e.line, format!("token {t:?} not in vocabulary"))
                    })
                })
                .collect::<Result<_>>()?;
            if lm.contains(&gram) {
                return Err(Error::parse(e.line, "duplicate n-gram"));
            }
            if gram.len() > 1 && !lm.contains(&gram[..gram.len() - 1]) {
                return Err(Error::parse(e.line, "n-gram prefix is not stored"));
            }
            lm.insert(
                gram,
                NgramEntry {
                    log_prob: e.log_prob,
                    backoff: e.backoff,
                },
            );
        }
    }
    Ok(lm)
}

/// Reads an ARPA model, building its vocabulary from the unigram section.
/// Reserved markers take ids 0..3, other words follow in file order.
pub fn read_arpa<R: BufRead>(source: R) -> Result<BackoffLm> {
    let raw = parse_raw(source)?;
    let words = raw.sections[0]
        .iter()
        .map(|e| e.tokens[0].as_str())
        .filter(|t| !matches!(*t, UNK | BOS | EOS));
    let vocab = Arc::new(Vocabulary::from_words(words)?);
    build(raw, vocab)
}

/// Reads an ARPA model whose tokens must all belong to `vocab`.
pub fn read_arpa_with_vocab<R: BufRead>(source: R, vocab: Arc<Vocabulary>) -> Result<BackoffLm> {
    build(parse_raw(source)?, vocab)
}
