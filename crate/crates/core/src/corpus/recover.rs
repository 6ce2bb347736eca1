use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::annotate::is_kb_token;
use super::{tokenize_question, Binding, Bindings, Entry, GlobalTemplate, LabelSource};
use crate::error::{Error, Result};
use crate::sparqltok::{detokenize, tokenize_query};

fn placeholder_index(token: &str) -> Option<usize> {
    token.strip_prefix('<')?.strip_suffix('>')?.parse().ok()
}

/// Reads the bindings of an entry generated from `template` by aligning the
/// query against the query template token by token.
pub fn match_bindings(template: &GlobalTemplate, entry: &Entry, labels: &LabelSource) -> Result<Bindings> {
    let pattern = tokenize_query(&template.query_template)?;
    let query = tokenize_query(&entry.query)?;
    let mismatch = |why: String| Error::InvalidTemplate {
        template: template.id.clone(),
        message: format!("entry `{}` does not follow the template: {why}", entry.id),
    };
    if pattern.len() != query.len() {
        return Err(mismatch(format!("{} query tokens, template has {}", query.len(), pattern.len())));
    }
    let mut bindings = Bindings::new();
    for (p, q) in pattern.iter().zip(&query) {
        match placeholder_index(p) {
            Some(i) => match bindings.get(&i) {
                Some(b) if b.kb_token != *q => {
                    return Err(mismatch(format!("placeholder <{i}> bound to both `{}` and `{q}`", b.kb_token)))
                }
                Some(_) => {}
                None => {
                    bindings.insert(i, Binding::new(q.clone(), labels.label(q)));
                }
            },
            None if p.eq_ignore_ascii_case(q) => {}
            None => return Err(mismatch(format!("`{q}` where the template has `{p}`"))),
        }
    }
    Ok(bindings)
}

/// Result of grouping entries by their delexicalized question and query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecovery {
    pub templates: Vec<GlobalTemplate>,
    /// Per input entry: the recovered template id and bindings, or `None`
    /// when the entry could not be delexicalized.
    pub assignments: Vec<Option<(String, Bindings)>>,
    /// Ids of entries left unmatched.
    pub unmatched: Vec<String>,
}

fn delexicalize(entry: &Entry, labels: &LabelSource) -> Result<Option<(String, String, Bindings)>> {
    let mut query = tokenize_query(&entry.query)?;
    let mut bindings = Bindings::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for tok in query.iter_mut() {
        if !is_kb_token(tok) {
            continue;
        }
        let next = index.len() + 1;
        let i = *index.entry(tok.clone()).or_insert(next);
        if i == next {
            bindings.insert(i, Binding::new(tok.clone(), labels.label(tok)));
        }
        *tok = format!("<{i}>");
    }
    let mut question: Vec<Option<String>> = tokenize_question(&entry.question).into_iter().map(Some).collect();
    // longest labels first so that "ike clanton" wins over "ike"
    let mut order: Vec<&usize> = bindings.keys().collect();
    order.sort_by_key(|i| std::cmp::Reverse(tokenize_question(&bindings[i].label).len()));
    let mut placed: Vec<(usize, usize, usize)> = Vec::new();
    for &i in order {
        let needle = tokenize_question(&bindings[&i].label);
        if needle.is_empty() || needle.len() > question.len() {
            return Ok(None);
        }
        let hit = (0..=question.len() - needle.len()).find(|&s| {
            needle
                .iter()
                .enumerate()
                .all(|(j, n)| question[s + j].as_deref() == Some(n.as_str()))
        });
        let Some(start) = hit else { return Ok(None) };
        for slot in &mut question[start..start + needle.len()] {
            *slot = None;
        }
        placed.push((start, needle.len(), i));
    }
    placed.sort();
    let mut out = Vec::new();
    let mut pos = 0;
    let words = tokenize_question(&entry.question);
    for (start, len, i) in placed {
        out.extend(words[pos..start].iter().cloned());
        out.push(format!("<{i}>"));
        pos = start + len;
    }
    out.extend(words[pos..].iter().cloned());
    Ok(Some((out.join(" "), detokenize(&query), bindings)))
}

/// Recovers global templates by replacing KB tokens with indexed
/// placeholders and grouping identical skeletons. Entries whose KB labels
/// cannot be found in the question are reported, not guessed.
pub fn recover_templates(entries: &[Entry], labels: &LabelSource) -> Result<TemplateRecovery> {
    let mut out = TemplateRecovery::default();
    let mut ids: HashMap<(String, String), String> = HashMap::new();
    for e in entries {
        match delexicalize(e, labels)? {
            None => {
                out.assignments.push(None);
                out.unmatched.push(e.id.clone());
            }
            Some((question, query, bindings)) => {
                let key = (question, query);
                let id = match ids.get(&key) {
                    Some(id) => id.clone(),
                    None => {
                        let id = format!("r{}", out.templates.len() + 1);
                        out.templates.push(GlobalTemplate::new(id.clone(), key.0.clone(), key.1.clone()));
                        ids.insert(key, id.clone());
                        id
                    }
                };
                out.assignments.push(Some((id, bindings)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::instantiate_template;

    #[test]
    fn recovers_shared_skeleton() {
        let t = GlobalTemplate::new("t", "what is the <1> of <2> ?", "select distinct ?uri where { <2> <1> ?uri }");
        let mk = |p: &str, pl: &str, e: &str, el: &str| {
            let b: Bindings = [(1, Binding::new(p, pl)), (2, Binding::new(e, el))].into_iter().collect();
            instantiate_template(&t, &b).unwrap()
        };
        let entries = vec![
            mk("dbp:office", "office", "dbr:Richard_Coke", "richard coke"),
            mk("dbo:spouse", "spouse", "dbr:Ike_Clanton", "ike clanton"),
            Entry::new("x", "who knows ?", "select ?x where { ?x dbo:knows dbr:Nobody }"),
        ];
        let r = recover_templates(&entries, &LabelSource::default()).unwrap();
        assert_eq!(r.templates.len(), 1);
        assert_eq!(r.templates[0].question_template, "what is the <2> of <1> ?");
        assert_eq!(r.unmatched, vec!["x".to_string()]);
        let (id, b) = r.assignments[1].clone().unwrap();
        assert_eq!(id, "r1");
        assert_eq!(b[&1].kb_token, "dbr:Ike_Clanton");
        r.templates[0].validate().unwrap();
    }

    #[test]
    fn match_bindings_reads_fillers() {
        let t = GlobalTemplate::new("t", "what is the <1> of <2> ?", "select distinct ?uri where { <2> <1> ?uri }");
        let e = Entry::new("1", "what is the office of richard coke ?", "select distinct ?uri where { dbr:Richard_Coke dbp:office ?uri }");
        let b = match_bindings(&t, &e, &LabelSource::default()).unwrap();
        assert_eq!(b[&1], Binding::new("dbp:office", "office"));
        assert_eq!(b[&2], Binding::new("dbr:Richard_Coke", "richard coke"));
        let other = Entry::new("2", "q", "ask where { dbr:A dbp:b dbr:C }");
        assert!(match_bindings(&t, &other, &LabelSource::default()).is_err());
    }
}
