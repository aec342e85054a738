mod common;

use std::collections::{BTreeMap, HashMap};

use hiersent_core::corpus::{
    enforce_article_cap, filter_sentences, largest_remainder, split_corpus, Domain, FilterConfig, SentenceRecord,
    SplitOptions, SplitRatios,
};
use hiersent_core::gateway::harvest_structured;
use hiersent_core::metrics::{bleu, meteor, rouge1_f1, TokenSequence};
use hiersent_core::penalty::{is_valid_json, structure_penalty, ValidityMode};
use hiersent_core::schema::{
    check_compliance, parse_structured, serialize_structured, Component, ComplianceConfig, CoreStatement,
    HierarchyNode, RelationCatalog, StructuredRep,
};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z][a-z ]{0,15}",
        "\\PC{1,12}".prop_filter("non-blank", |s| !s.trim().is_empty()),
    ]
}

fn node() -> impl Strategy<Value = HierarchyNode> {
    let leaf = (text(), prop::collection::vec(text(), 1..3))
        .prop_map(|(r, comps)| HierarchyNode::new(r, comps.into_iter().map(Component::Text).collect()));
    leaf.prop_recursive(4, 24, 3, |inner| {
        (
            text(),
            prop::collection::vec(
                prop_oneof![text().prop_map(Component::Text), prop::collection::vec(inner, 1..3).prop_map(Component::Nested)],
                1..4,
            ),
        )
            .prop_map(|(r, comps)| HierarchyNode::new(r, comps))
    })
}

fn structured() -> impl Strategy<Value = StructuredRep> {
    (text(), text(), prop::collection::vec(node(), 0..3)).prop_map(|(label, claim, hierarchy)| StructuredRep {
        core: CoreStatement { label, claim },
        hierarchy,
    })
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "cells", "cell", "run", "runs", "the"]), 1..9)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

const DOMAINS: [Domain; 7] = Domain::ALL;

fn records() -> impl Strategy<Value = Vec<SentenceRecord>> {
    prop::collection::vec((0..7usize, 0..12usize), 1..200).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (d, a))| {
                let domain = DOMAINS[d];
                SentenceRecord {
                    id: format!("r{i:04}"),
                    text: if i % 5 == 0 {
                        format!("Prior work [{i}] reported this.")
                    } else {
                        format!("Plain sentence number {i} about results.")
                    },
                    domain,
                    repository: domain.repository(),
                    article_id: format!("{d}-{a}"),
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schema_round_trip(rep in structured()) {
        let s = serialize_structured(&rep);
        let back = parse_structured(&s).unwrap();
        prop_assert_eq!(&back, &rep);
        prop_assert_eq!(serialize_structured(&back), s.clone());
        prop_assert!(json::parse(&s).is_ok());
    }

    #[test]
    fn independent_parser_accepts_whatever_the_schema_accepts(rep in structured(), cut in 0usize..400, junk in "[{}\\[\\]\",: a]{0,3}") {
        let s = serialize_structured(&rep);
        let cut = s.char_indices().map(|(i, _)| i).nth(cut % s.chars().count().max(1)).unwrap_or(s.len());
        let mutated = format!("{}{}{}", &s[..cut], junk, &s[cut..]);
        if parse_structured(&mutated).is_ok() {
            prop_assert!(json::parse(&mutated).is_ok(), "{}", mutated);
        }
    }

    #[test]
    fn harvest_recovers_rep_from_prose(rep in structured(), before in "[A-Za-z .,:\n]{0,40}", after in "[A-Za-z .,:\n]{0,40}") {
        let s = format!("{before}{}{after}", serialize_structured(&rep));
        prop_assert_eq!(harvest_structured(&s).unwrap(), rep);
    }

    #[test]
    fn compliance_is_monotone(rep in structured(), original in "[a-z ]{1,80}", lo in 0.05f64..0.5, bump in 0.0f64..0.5) {
        let catalog = RelationCatalog::default();
        let at = |threshold: f64, orig: &str| -> Vec<String> {
            let cfg = ComplianceConfig { threshold, ..ComplianceConfig::default() };
            check_compliance(&rep, orig, &catalog, &cfg).field_ratio_violations.into_iter().map(|v| v.path).collect()
        };
        let strict = at(lo, &original);
        let loose = at(lo + bump, &original);
        prop_assert!(loose.iter().all(|p| strict.contains(p)));
        let longer = format!("{original} {original}");
        let vs_longer = at(lo, &longer);
        prop_assert!(vs_longer.iter().all(|p| strict.contains(p)));
    }

    #[test]
    fn penalty_laws(a in prop::collection::vec(".{0,30}|\\{\"k\":[0-9]\\}|x \\{\"k\":1\\} y", 1..8),
                    b in prop::collection::vec(".{0,30}|\\{\"k\":[0-9]\\}", 1..8)) {
        for mode in [ValidityMode::Strict, ValidityMode::Extract] {
            let fa = structure_penalty(&a, mode).unwrap();
            let fb = structure_penalty(&b, mode).unwrap();
            prop_assert!((0.0..=1.0).contains(&fa.struct_penalty));
            let mut rev = a.clone();
            rev.reverse();
            prop_assert_eq!(structure_penalty(&rev, mode).unwrap(), fa);
            let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
            let whole = structure_penalty(&joined, mode).unwrap();
            prop_assert_eq!(whole, fa.merge(&fb));
            prop_assert_eq!(whole.struct_penalty, (fa.failures + fb.failures) as f64 / (a.len() + b.len()) as f64);
        }
        for s in &a {
            if is_valid_json(s, ValidityMode::Strict) {
                prop_assert!(is_valid_json(s, ValidityMode::Extract));
            }
        }
    }

    #[test]
    fn metric_ranges_and_identities(c in words(), r in words()) {
        let ct: TokenSequence = c.iter().map(String::as_str).collect();
        let rt: TokenSequence = r.iter().map(String::as_str).collect();
        for v in [bleu(&ct, &rt).unwrap(), rouge1_f1(&ct, &rt).unwrap(), meteor(&ct, &rt).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
        prop_assert_eq!(rouge1_f1(&ct, &rt).unwrap(), rouge1_f1(&rt, &ct).unwrap());
        prop_assert_eq!(bleu(&ct, &ct).unwrap(), 1.0);
        prop_assert_eq!(rouge1_f1(&ct, &ct).unwrap(), 1.0);
        let m = ct.len() as f64;
        prop_assert!((meteor(&ct, &ct).unwrap() - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12);
    }

    #[test]
    fn stratified_cells_stay_within_one_of_quota(recs in records(), seed in any::<u64>()) {
        let ratios = SplitRatios::default();
        let targets = largest_remainder(recs.len(), &ratios.as_array());
        prop_assume!(targets.iter().all(|&t| t > 0));
        let m = split_corpus(&recs, &SplitOptions { seed, ratios, stratify: true }).unwrap();
        prop_assert_eq!(vec![m.train_ids.len(), m.val_ids.len(), m.test_ids.len()], targets);
        let domain_of: HashMap<&str, Domain> = recs.iter().map(|r| (r.id.as_str(), r.domain)).collect();
        let mut sizes: BTreeMap<Domain, usize> = BTreeMap::new();
        for r in &recs {
            *sizes.entry(r.domain).or_default() += 1;
        }
        for (s, ids) in [&m.train_ids, &m.val_ids, &m.test_ids].into_iter().enumerate() {
            let mut cell: BTreeMap<Domain, usize> = BTreeMap::new();
            for id in ids {
                *cell.entry(domain_of[id.as_str()]).or_default() += 1;
            }
            for (d, &n) in &sizes {
                let quota = n as f64 * ratios.as_array()[s];
                let got = cell.get(d).copied().unwrap_or(0) as f64;
                prop_assert!((got - quota).abs() < 1.0 + 1e-9, "{:?} split {} got {} quota {}", d, s, got, quota);
            }
        }
        let mut all: Vec<&String> = m.train_ids.iter().chain(&m.val_ids).chain(&m.test_ids).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), recs.len());
        prop_assert_eq!(split_corpus(&recs, &SplitOptions { seed, ratios, stratify: true }).unwrap(), m);
    }

    #[test]
    fn article_cap_keeps_first_sentences(recs in records(), cap in 1usize..8) {
        let (kept, excluded) = enforce_article_cap(recs.clone(), cap).unwrap();
        prop_assert_eq!(kept.len() + excluded.len(), recs.len());
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut expected = Vec::new();
        for r in &recs {
            let n = seen.entry(&r.article_id).or_default();
            *n += 1;
            if *n <= cap {
                expected.push(r.id.clone());
            }
        }
        prop_assert_eq!(kept.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn filtering_is_idempotent(recs in records()) {
        let cfg = FilterConfig::default();
        let (once, _) = filter_sentences(recs, &cfg).unwrap();
        let (twice, report) = filter_sentences(once.clone(), &cfg).unwrap();
        prop_assert_eq!(twice, once);
        prop_assert!(report.excluded.is_empty());
    }
}

#[test]
fn filter_fixture_matches_hand_labels() {
    let cases = common::fixture_lines("filter_cases.jsonl");
    assert_eq!(cases.len(), 50);
    let cfg = FilterConfig::default();
    for case in cases {
        let rec = SentenceRecord {
            id: case["id"].as_str().unwrap().into(),
            text: case["text"].as_str().unwrap().into(),
            domain: Domain::Physics,
            repository: Domain::Physics.repository(),
            article_id: "a".into(),
        };
        let got = hiersent_core::corpus::classify(&rec, &cfg).map(|r| serde_json::to_value(r).unwrap());
        let want = Some(case["expected"].clone()).filter(|v| !v.is_null());
        assert_eq!(got, want, "{}", rec.text);
    }
}

#[test]
fn incomplete_ids_are_excluded_first() {
    let rec = SentenceRecord {
        id: "x1".into(),
        text: "The energy satisfies E = mc^2.".into(),
        domain: Domain::Physics,
        repository: Domain::Physics.repository(),
        article_id: "a".into(),
    };
    let cfg = FilterConfig {
        incomplete_ids: ["x1".to_string()].into(),
        ..FilterConfig::default()
    };
    let (kept, report) = filter_sentences(vec![rec], &cfg).unwrap();
    assert!(kept.is_empty());
    assert_eq!(serde_json::to_value(report.excluded[0].reason).unwrap(), "incomplete");
}
