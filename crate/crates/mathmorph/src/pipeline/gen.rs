//! The four dataset generators. Generation is parallel across work items;
//! every item derives its generator from (global seed, stable id), and
//! results are merged in input order, so output is identical for any
//! worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{parse_version, Identity, ParsedVersion, VersionKind};
use crate::expr::MathText;
use crate::falsify::{FalsifyInput, SlicePool};
use crate::generate::{evg_formula, evg_text, fvg, GenConfig, VersionMeta};
use crate::par::{derive_seed, par_map};
use crate::parser::{parse_formula, parse_math_text};
use crate::subst::{apply_substitution, apply_substitution_text, sample_substitution_avoiding};

use super::{
    CandidateFormula, CorpusDoc, DatasetRecord, DedupSet, DocKind, RecordMeta, RunReport,
    SCHEMA_VERSION,
};

const VERSION_RETRY: usize = 8;

// ---------------------------------------------------------------------------
// MF
// ---------------------------------------------------------------------------

/// Emits each input formula plus up to `cap` equivalent versions, with
/// global string-level dedup.
pub fn gen_mf(
    candidates: &[CandidateFormula],
    cap: usize,
    cfg: &GenConfig,
    seed: u64,
    jobs: usize,
) -> (Vec<DatasetRecord>, RunReport) {
    let mut report = RunReport { inputs: candidates.len(), ..Default::default() };
    let per_formula: Vec<Vec<(String, VersionMeta, u32)>> =
        par_map(candidates.to_vec(), jobs.max(1), |cand| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &cand.source));
            let Ok(parsed) = parse_formula(&cand.latex, &cfg.parse) else {
                return vec![];
            };
            let mut local = DedupSet::new(false);
            let mut out: Vec<(String, VersionMeta, u32)> = Vec::with_capacity(cap + 1);
            local.insert(&cand.latex);
            out.push((
                cand.latex.clone(),
                VersionMeta { original: true, ..Default::default() },
                0,
            ));
            let mut version = 1u32;
            for _ in 0..cap {
                for _attempt in 0..VERSION_RETRY {
                    let (printed, meta) = evg_formula(&parsed, cfg, &mut rng);
                    if local.insert(&printed) {
                        out.push((printed, meta, version));
                        version += 1;
                        break;
                    }
                }
            }
            out
        });

    let mut global = DedupSet::new(false);
    let mut records = Vec::new();
    for (cand, versions) in candidates.iter().zip(per_formula) {
        if versions.is_empty() {
            report.skip("unparsable");
            continue;
        }
        for (formula, meta, version) in versions {
            if !global.insert(&formula) {
                report.dedup_collisions += 1;
                continue;
            }
            records.push(DatasetRecord::Mf {
                schema: SCHEMA_VERSION,
                formula,
                meta: RecordMeta::from_version(&meta, &cand.source, version),
            });
        }
    }
    records.sort_by(|a, b| {
        (a.meta().source.as_str(), a.meta().version).cmp(&(b.meta().source.as_str(), b.meta().version))
    });
    report.emitted = records.len();
    (records, report)
}

// ---------------------------------------------------------------------------
// MT
// ---------------------------------------------------------------------------

/// Emits math texts (>= `min_formulas` formulas, answers need `min_score`
/// upvotes) plus up to `cap` consistently substituted versions.
pub fn gen_mt(
    docs: &[CorpusDoc],
    min_formulas: usize,
    min_score: i64,
    cap: usize,
    cfg: &GenConfig,
    seed: u64,
    jobs: usize,
) -> (Vec<DatasetRecord>, RunReport) {
    let mut report = RunReport { inputs: docs.len(), ..Default::default() };
    let mut eligible: Vec<(String, MathText)> = Vec::new();
    for doc in docs {
        if doc.kind == DocKind::Answer && doc.score.unwrap_or(0) < min_score {
            report.skip("score_below_threshold");
            continue;
        }
        let Ok(text) = parse_math_text(&doc.text, &cfg.parse) else {
            report.skip("unbalanced_dollars");
            continue;
        };
        if text.formula_count() < min_formulas {
            report.skip("too_few_formulas");
            continue;
        }
        eligible.push((doc.id.clone(), text));
    }

    let per_doc: Vec<Vec<(String, VersionMeta, u32)>> =
        par_map(eligible.clone(), jobs.max(1), |(id, text)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id));
            let mut local = DedupSet::new(false);
            let mut out = Vec::with_capacity(cap + 1);
            let original = text.to_source();
            local.insert(&original);
            out.push((original, VersionMeta { original: true, ..Default::default() }, 0));
            let mut version = 1u32;
            for _ in 0..cap {
                for _attempt in 0..VERSION_RETRY {
                    let (printed, meta) = evg_text(&text, cfg, &mut rng);
                    if local.insert(&printed) {
                        out.push((printed, meta, version));
                        version += 1;
                        break;
                    }
                }
            }
            out
        });

    let mut global = DedupSet::new(false);
    let mut records = Vec::new();
    for ((id, _), versions) in eligible.iter().zip(per_doc) {
        for (text, meta, version) in versions {
            if !global.insert(&text) {
                report.dedup_collisions += 1;
                continue;
            }
            records.push(DatasetRecord::Mt {
                schema: SCHEMA_VERSION,
                text,
                meta: RecordMeta::from_version(&meta, id, version),
            });
        }
    }
    records.sort_by(|a, b| {
        (a.meta().source.as_str(), a.meta().version).cmp(&(b.meta().source.as_str(), b.meta().version))
    });
    report.emitted = records.len();
    (records, report)
}

// ---------------------------------------------------------------------------
// NMF
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NmfConfig {
    /// Total versions per identity (positives plus negatives).
    pub cap: usize,
    /// Negatives per positive, exact per identity when not exhausted.
    pub neg_ratio: usize,
    /// Share of text-kind bases for identities with text versions.
    pub text_ratio: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig { cap: 400_000, neg_ratio: 4, text_ratio: 0.6 }
    }
}

struct PosVersion {
    name: String,
    content: String,
    tree: FalsifyInput,
    text_kind: bool,
    meta: VersionMeta,
}

/// Picks a base version honoring the text ratio.
fn pick_base<'a>(
    formulas: &'a [(usize, FalsifyInput)],
    texts: &'a [(usize, FalsifyInput)],
    text_ratio: f64,
    rng: &mut impl Rng,
) -> Option<&'a (usize, FalsifyInput)> {
    let use_text = if texts.is_empty() {
        false
    } else if formulas.is_empty() {
        true
    } else {
        rng.gen_bool(text_ratio.clamp(0.0, 1.0))
    };
    let list = if use_text { texts } else { formulas };
    if list.is_empty() {
        return None;
    }
    Some(&list[rng.gen_range(0..list.len())])
}

/// Generates the name/formula dataset: equivalent versions labeled true,
/// falsified versions labeled false, at an exact negative:positive ratio
/// per identity.
pub fn gen_nmf(
    catalog: &[Identity],
    cfg: &NmfConfig,
    gen_cfg: &GenConfig,
    seed: u64,
    jobs: usize,
) -> (Vec<DatasetRecord>, RunReport) {
    let mut report = RunReport { inputs: catalog.len(), ..Default::default() };
    let pos_target = (cfg.cap / (1 + cfg.neg_ratio)).max(1);

    // Parse every identity's versions once.
    let parsed: Vec<(Vec<(usize, FalsifyInput)>, Vec<(usize, FalsifyInput)>)> = catalog
        .iter()
        .map(|identity| {
            let mut formulas = Vec::new();
            let mut texts = Vec::new();
            for (vi, version) in identity.versions.iter().enumerate() {
                match parse_version(identity, version) {
                    Ok(ParsedVersion::Formula(f)) => {
                        formulas.push((vi, FalsifyInput::Formula(f)))
                    }
                    Ok(ParsedVersion::Text(t)) => {
                        if version.kind == VersionKind::Text {
                            texts.push((vi, FalsifyInput::Text(t)));
                        }
                    }
                    Err(_) => {}
                }
            }
            (formulas, texts)
        })
        .collect();

    // Phase 1: positives, parallel across identities.
    let phase1_items: Vec<usize> = (0..catalog.len()).collect();
    let positives: Vec<Vec<PosVersion>> = par_map(phase1_items, jobs.max(1), |ii| {
        let identity = &catalog[ii];
        let (formulas, texts) = &parsed[ii];
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("nmf-pos/{}", identity.primary_name())));
        let mut local = DedupSet::new(false);
        let mut out: Vec<PosVersion> = Vec::new();
        for _ in 0..pos_target {
            for _attempt in 0..VERSION_RETRY {
                let Some((_, base)) = pick_base(formulas, texts, cfg.text_ratio, &mut rng) else {
                    break;
                };
                // Substitute on the tree, keep the substituted tree for the
                // pool, then print.
                let (tree, content, meta) = match base {
                    FalsifyInput::Formula(f) => {
                        let symbols = f.free_symbols();
                        let map = sample_substitution_avoiding(
                            &symbols,
                            &Default::default(),
                            &gen_cfg.subst,
                            &mut rng,
                        );
                        let substituted =
                            apply_substitution(f, &map).unwrap_or_else(|_| f.clone());
                        let printed =
                            crate::printer::print_random(&substituted, &gen_cfg.print, &mut rng);
                        let meta = VersionMeta {
                            substituted_variable: map.has_variable_entry(),
                            substituted_function: map.has_function_entry(),
                            ..Default::default()
                        };
                        (FalsifyInput::Formula(substituted), printed, meta)
                    }
                    FalsifyInput::Text(t) => {
                        let symbols = t.free_symbols();
                        let map = sample_substitution_avoiding(
                            &symbols,
                            &Default::default(),
                            &gen_cfg.subst,
                            &mut rng,
                        );
                        let substituted =
                            apply_substitution_text(t, &map).unwrap_or_else(|_| t.clone());
                        let printed =
                            crate::printer::print_text_random(&substituted, &gen_cfg.print, &mut rng);
                        let meta = VersionMeta {
                            substituted_variable: map.has_variable_entry(),
                            substituted_function: map.has_function_entry(),
                            ..Default::default()
                        };
                        (FalsifyInput::Text(substituted), printed, meta)
                    }
                };
                if local.insert(&content) {
                    let name =
                        identity.names[rng.gen_range(0..identity.names.len())].clone();
                    let text_kind = matches!(tree, FalsifyInput::Text(_));
                    out.push(PosVersion { name, content, tree, text_kind, meta });
                    break;
                }
            }
        }
        out
    });

    // Immutable pool snapshot: substituted positive trees of every
    // identity, taken before parallel falsification begins.
    let pool = SlicePool {
        items: positives
            .iter()
            .enumerate()
            .flat_map(|(ii, versions)| {
                let name = catalog[ii].primary_name().to_string();
                versions.iter().map(move |v| (name.clone(), v.tree.clone()))
            })
            .collect(),
    };

    // Phase 2: negatives, parallel across identities.
    let phase2_items: Vec<usize> = (0..catalog.len()).collect();
    let negatives: Vec<Vec<(String, String, VersionMeta, bool)>> =
        par_map(phase2_items, jobs.max(1), |ii| {
            let identity = &catalog[ii];
            let (formulas, texts) = &parsed[ii];
            let hints = identity.hints();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &format!("nmf-neg/{}", identity.primary_name()),
            ));
            let mut local = DedupSet::new(false);
            for v in &positives[ii] {
                local.insert(&v.content);
            }
            let neg_target = positives[ii].len() * cfg.neg_ratio;
            let mut out = Vec::with_capacity(neg_target);
            for _ in 0..neg_target {
                for _attempt in 0..VERSION_RETRY {
                    let Some((_, base)) = pick_base(formulas, texts, cfg.text_ratio, &mut rng)
                    else {
                        break;
                    };
                    let Ok((printed, meta)) = fvg(
                        base,
                        Some(&hints),
                        &pool,
                        Some(identity.primary_name()),
                        gen_cfg,
                        &mut rng,
                    ) else {
                        continue;
                    };
                    if local.insert(&printed) {
                        let name =
                            identity.names[rng.gen_range(0..identity.names.len())].clone();
                        let text_kind = printed.contains('$') || matches!(base, FalsifyInput::Text(_));
                        out.push((name, printed, meta, text_kind));
                        break;
                    }
                }
            }
            out
        });

    // Merge with exact ratio enforcement per identity.
    let mut records = Vec::new();
    for ii in 0..catalog.len() {
        let identity = &catalog[ii];
        let pos = &positives[ii];
        let neg = &negatives[ii];
        let kept_pos = pos.len().min(neg.len() / cfg.neg_ratio.max(1));
        let kept_neg = kept_pos * cfg.neg_ratio;
        if kept_pos < pos.len() || kept_neg < neg.len() {
            report.skip("ratio_trimmed");
        }
        if kept_pos == 0 {
            report.skip("identity_exhausted");
            continue;
        }
        let identity_name = identity.primary_name().to_string();
        let mut version = 0u32;
        for v in &pos[..kept_pos] {
            let mut meta = RecordMeta::from_version(&v.meta, &identity_name, version);
            meta.identity = Some(identity_name.clone());
            meta.text_kind = Some(v.text_kind);
            records.push(DatasetRecord::Nmf {
                schema: SCHEMA_VERSION,
                name: v.name.clone(),
                formula: v.content.clone(),
                label: true,
                meta,
            });
            version += 1;
        }
        for (name, formula, vmeta, text_kind) in &neg[..kept_neg] {
            let mut meta = RecordMeta::from_version(vmeta, &identity_name, version);
            meta.identity = Some(identity_name.clone());
            meta.text_kind = Some(*text_kind);
            records.push(DatasetRecord::Nmf {
                schema: SCHEMA_VERSION,
                name: name.clone(),
                formula: formula.clone(),
                label: false,
                meta,
            });
            version += 1;
        }
    }
    report.emitted = records.len();
    (records, report)
}

// ---------------------------------------------------------------------------
// MFR
// ---------------------------------------------------------------------------

/// Pairs each true formula with one random equivalent version of the same
/// identity (label true) and `neg_ratio` random falsified versions of it
/// (label false), all drawn from the name/formula dataset.
pub fn gen_mfr(
    nmf_records: &[DatasetRecord],
    neg_ratio: usize,
    seed: u64,
) -> (Vec<DatasetRecord>, RunReport) {
    use std::collections::BTreeMap;
    let mut by_identity: BTreeMap<String, (Vec<&DatasetRecord>, Vec<&DatasetRecord>)> =
        BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in nmf_records {
        let DatasetRecord::Nmf { label, meta, .. } = r else { continue };
        let identity = meta.identity.clone().unwrap_or_else(|| meta.source.clone());
        if !by_identity.contains_key(&identity) {
            order.push(identity.clone());
        }
        let entry = by_identity.entry(identity).or_default();
        if *label {
            entry.0.push(r);
        } else {
            entry.1.push(r);
        }
    }

    let mut report = RunReport { inputs: by_identity.len(), ..Default::default() };
    let mut records = Vec::new();
    let mut seen = DedupSet::new(false);
    for identity in order {
        let (pos, neg) = &by_identity[&identity];
        if pos.len() < 2 || neg.len() < neg_ratio {
            report.skip("identity_missing_labels");
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mfr/{identity}")));
        let mut version = 0u32;
        for (pi, p) in pos.iter().enumerate() {
            let DatasetRecord::Nmf { formula: f1, meta: m1, .. } = p else { continue };
            // one random equivalent partner (a different positive)
            let mut oi = rng.gen_range(0..pos.len() - 1);
            if oi >= pi {
                oi += 1;
            }
            let DatasetRecord::Nmf { formula: f2, meta: m2, .. } = pos[oi] else { continue };
            let mut emit = |f1: &str, f2: &str, label: bool, partner: &RecordMeta, version: &mut u32, records: &mut Vec<DatasetRecord>, report: &mut RunReport| {
                let key = format!("{f1}\u{1}{f2}\u{1}{label}");
                if !seen.insert(&key) {
                    report.dedup_collisions += 1;
                    return;
                }
                let meta = RecordMeta {
                    source: identity.clone(),
                    version: *version,
                    identity: Some(identity.clone()),
                    text_kind: None,
                    original: false,
                    substituted_variable: m1.substituted_variable || partner.substituted_variable,
                    substituted_function: m1.substituted_function || partner.substituted_function,
                    strategies: partner.strategies.clone(),
                    descriptions: partner.descriptions.clone(),
                };
                records.push(DatasetRecord::Mfr {
                    schema: SCHEMA_VERSION,
                    formula1: f1.to_string(),
                    formula2: f2.to_string(),
                    label,
                    meta,
                });
                *version += 1;
            };
            emit(f1, f2, true, m2, &mut version, &mut records, &mut report);
            // neg_ratio falsified partners, without replacement
            let mut indices: Vec<usize> = (0..neg.len()).collect();
            for k in 0..neg_ratio.min(indices.len()) {
                let j = rng.gen_range(k..indices.len());
                indices.swap(k, j);
                let DatasetRecord::Nmf { formula: nf, meta: nm, .. } = neg[indices[k]] else {
                    continue;
                };
                emit(f1, nf, false, nm, &mut version, &mut records, &mut report);
            }
        }
    }
    report.emitted = records.len();
    (records, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::bundled_catalog;

    fn small_catalog() -> Vec<Identity> {
        bundled_catalog().into_iter().take(6).collect()
    }

    #[test]
    fn mf_respects_version_cap() {
        let candidates = vec![
            CandidateFormula { source: "a".into(), latex: r"(a+b)^2=a^2+2ab+b^2".into() },
            CandidateFormula { source: "b".into(), latex: r"\sqrt{25} = 5".into() },
        ];
        let (records, _) = gen_mf(&candidates, 10, &GenConfig::default(), 42, 1);
        for source in ["a", "b"] {
            let n = records.iter().filter(|r| r.meta().source == source).count();
            assert!(n <= 11, "{source} produced {n} > cap+1 versions");
            assert!(n >= 1);
        }
        // low-entropy input generates fewer versions than the cap
        let constant = records.iter().filter(|r| r.meta().source == "b").count();
        assert!(constant < 11, "constant formula cannot fill the cap, got {constant}");
    }

    #[test]
    fn mf_deterministic_across_jobs() {
        let candidates: Vec<CandidateFormula> = (0..6)
            .map(|i| CandidateFormula {
                source: format!("f{i}"),
                latex: r"(a+b)^2=a^2+2ab+b^2".into(),
            })
            .collect();
        let (seq, _) = gen_mf(&candidates, 5, &GenConfig::default(), 7, 1);
        let (par, _) = gen_mf(&candidates, 5, &GenConfig::default(), 7, 4);
        assert_eq!(super::super::write_jsonl(&seq), super::super::write_jsonl(&par));
    }

    #[test]
    fn nmf_exact_ratio_and_unique() {
        let catalog = small_catalog();
        let cfg = NmfConfig { cap: 20, neg_ratio: 4, text_ratio: 0.6 };
        let (records, _) = gen_nmf(&catalog, &cfg, &GenConfig::default(), 42, 1);
        let mut seen = std::collections::HashSet::new();
        for identity in catalog.iter().map(|i| i.primary_name()) {
            let pos = records
                .iter()
                .filter(|r| {
                    r.meta().identity.as_deref() == Some(identity) && r.label() == Some(true)
                })
                .count();
            let neg = records
                .iter()
                .filter(|r| {
                    r.meta().identity.as_deref() == Some(identity) && r.label() == Some(false)
                })
                .count();
            if pos > 0 {
                assert_eq!(neg, pos * 4, "{identity}: {pos} pos vs {neg} neg");
            }
        }
        for r in &records {
            if let DatasetRecord::Nmf { name, formula, .. } = r {
                assert!(seen.insert(format!("{name}\u{1}{formula}")), "duplicate {formula}");
            }
        }
    }

    #[test]
    fn mfr_pairs_with_ratio() {
        let catalog = small_catalog();
        let cfg = NmfConfig { cap: 15, neg_ratio: 4, text_ratio: 0.6 };
        let (nmf, _) = gen_nmf(&catalog, &cfg, &GenConfig::default(), 42, 1);
        let (mfr, _) = gen_mfr(&nmf, 4, 42);
        assert!(!mfr.is_empty());
        let pos = mfr.iter().filter(|r| r.label() == Some(true)).count();
        let neg = mfr.iter().filter(|r| r.label() == Some(false)).count();
        assert!(neg >= 3 * pos, "ratio roughly preserved: {pos} pos vs {neg} neg");
    }
}
