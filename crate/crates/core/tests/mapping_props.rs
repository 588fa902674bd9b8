use std::collections::BTreeSet;

use cdm_core::loss::lm_loss;
use cdm_core::pipeline::{run_corpus, run_sentence, CdmConfig, MappingState};
use cdm_core::tensorio::{LogitsMatrix, SentenceRecord};
use cdm_core::vocab::{normalized_edit_distance, Vocabulary};
use cdm_core::vocabmap::{topk_select, update_dynamic_map, Provenance, MASK_SENTINEL};
use proptest::prelude::*;

fn vocab(marker: char) -> impl Strategy<Value = Vocabulary> {
    prop::collection::btree_set(("[abcd]{1,4}", any::<bool>()), 2..10).prop_map(move |set| {
        // distinct canonical forms, so the exact tables are injective
        let tokens: Vec<String> = set.into_iter().map(|(t, ls)| if ls { format!("{marker}{t}") } else { t }).collect();
        Vocabulary::from_tokens(tokens).unwrap()
    })
}

fn logits(n: usize, v: usize) -> impl Strategy<Value = LogitsMatrix> {
    (prop::collection::vec(0..v as u32, n), prop::collection::vec((-16i32..16).prop_map(|x| x as f32 / 4.0), n * v))
        .prop_map(move |(ids, values)| LogitsMatrix::new(ids, v, values).unwrap())
}

struct Case {
    v_stu: Vocabulary,
    v_tea: Vocabulary,
    student: Vec<LogitsMatrix>,
    teacher: Vec<LogitsMatrix>,
    cfg: CdmConfig,
}

impl std::fmt::Debug for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Case")
            .field("v_stu", &self.v_stu.tokens())
            .field("v_tea", &self.v_tea.tokens())
            .field("records", &self.student.len())
            .field("cfg", &self.cfg)
            .finish()
    }
}

fn corpus() -> impl Strategy<Value = Case> {
    (vocab('\u{2581}'), vocab('\u{0120}'), 0usize..5, 0.0f64..0.8).prop_flat_map(|(v_stu, v_tea, records, theta)| {
        let (vs, vt) = (v_stu.size(), v_tea.size());
        let k_max = vs.min(vt);
        (prop::collection::vec((1usize..6, 1usize..6), records), 1..=k_max, Just((v_stu, v_tea, theta))).prop_flat_map(
            move |(lens, k, (v_stu, v_tea, theta))| {
                let stu = lens.iter().map(|&(n, _)| logits(n, vs)).collect::<Vec<_>>();
                let tea = lens.iter().map(|&(_, n)| logits(n, vt)).collect::<Vec<_>>();
                (stu, tea).prop_map(move |(student, teacher)| Case {
                    v_stu: v_stu.clone(),
                    v_tea: v_tea.clone(),
                    student,
                    teacher,
                    cfg: CdmConfig { theta, k, ..Default::default() },
                })
            },
        )
    })
}

type Pairs = BTreeSet<(u32, u32)>;

fn entries(state: &MappingState) -> (Pairs, Pairs) {
    let f = state.forward.entries().map(|(s, e)| (s, e.target)).collect();
    let r = state.reverse.entries().map(|(s, e)| (s, e.target)).collect();
    (f, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn tables_only_grow_and_fuzzy_entries_reverify(case in corpus()) {
        let mut state = MappingState::new(&case.v_stu, &case.v_tea);
        for (s, t) in case.student.iter().zip(&case.teacher) {
            let before = entries(&state);
            let rec = SentenceRecord { text: String::new(), student: s.clone(), teacher: t.clone() };
            let out = run_sentence(&rec, &case.v_stu, &case.v_tea, &mut state, &case.cfg).unwrap();
            let after = entries(&state);
            prop_assert!(before.0.is_subset(&after.0));
            prop_assert!(before.1.is_subset(&after.1));

            for block in &out.blocks {
                prop_assert_eq!(block.stu.len(), 2 * case.cfg.k);
                for ((&s, &t), &m) in block.stu.iter().zip(&block.tea).zip(&block.mask) {
                    prop_assert_eq!(m, s != MASK_SENTINEL);
                    prop_assert_eq!(m, t != MASK_SENTINEL);
                }
            }
        }
        for (table, v_src, v_tgt) in [
            (&state.forward, &case.v_tea, &case.v_stu),
            (&state.reverse, &case.v_stu, &case.v_tea),
        ] {
            for (src, e) in table.entries() {
                let a = v_src.canonical(src).unwrap();
                let b = v_tgt.canonical(e.target).unwrap();
                match e.provenance {
                    Provenance::Exact => prop_assert_eq!(a, b),
                    Provenance::Fuzzy => {
                        prop_assert!(normalized_edit_distance(a, b).unwrap() < case.cfg.theta)
                    }
                }
            }
        }
    }

    #[test]
    fn theta_zero_keeps_the_exact_tables(case in corpus()) {
        let cfg = CdmConfig { theta: 0.0, ..case.cfg };
        let out = run_corpus(&case.student, &case.teacher, &case.v_stu, &case.v_tea, &cfg).unwrap();
        let exact = MappingState::new(&case.v_stu, &case.v_tea);
        prop_assert_eq!(&out.state.forward, &exact.forward);
        prop_assert_eq!(&out.state.reverse, &exact.reverse);
    }

    #[test]
    fn runs_are_deterministic(case in corpus()) {
        let a = run_corpus(&case.student, &case.teacher, &case.v_stu, &case.v_tea, &case.cfg).unwrap();
        let b = run_corpus(&case.student, &case.teacher, &case.v_stu, &case.v_tea, &case.cfg).unwrap();
        prop_assert_eq!(a.report.kl.to_bits(), b.report.kl.to_bits());
        prop_assert_eq!(a.report.lm.to_bits(), b.report.lm.to_bits());
        prop_assert_eq!(a.state.export_json(), b.state.export_json());
        prop_assert_eq!(a.alignments, b.alignments);
    }

    #[test]
    fn update_reports_the_number_of_added_keys(case in corpus()) {
        let mut state = MappingState::new(&case.v_stu, &case.v_tea);
        for (s, t) in case.student.iter().zip(&case.teacher) {
            // align lengths by truncation; the update is position-wise
            let n = s.n_positions().min(t.n_positions());
            let cut = |m: &LogitsMatrix| {
                let v = m.vocab_size();
                LogitsMatrix::new(m.token_ids()[..n].to_vec(), v, m.values()[..n * v].to_vec()).unwrap()
            };
            let st = topk_select(&cut(s), case.cfg.k).unwrap();
            let tt = topk_select(&cut(t), case.cfg.k).unwrap();
            let before = state.forward.len();
            let added =
                update_dynamic_map(&mut state.forward, &tt, &st, &case.v_tea, &case.v_stu, case.cfg.theta).unwrap();
            prop_assert_eq!(state.forward.len(), before + added);
        }
    }
}

/// Plain `KL(p || q)` of two softmaxed rows at temperature 1.
fn plain_kl(p_logits: &[f32], q_logits: &[f32]) -> f64 {
    let softmax = |x: &[f32]| {
        let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let e: Vec<f64> = x.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect::<Vec<_>>()
    };
    let (p, q) = (softmax(p_logits), softmax(q_logits));
    p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum()
}

fn same_tokenizer_case() -> impl Strategy<Value = (Vocabulary, LogitsMatrix, LogitsMatrix)> {
    vocab('\u{2581}').prop_flat_map(|v| {
        let size = v.size();
        (1usize..6).prop_flat_map(move |n| {
            let v = v.clone();
            (prop::collection::vec(0..size as u32, n), logits(n, size), logits(n, size)).prop_map(move |(ids, s, t)| {
                let s = LogitsMatrix::new(ids.clone(), size, s.values().to_vec()).unwrap();
                let t = LogitsMatrix::new(ids, size, t.values().to_vec()).unwrap();
                (v.clone(), s, t)
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn full_support_kl_equals_plain_kl((v, s, t) in same_tokenizer_case()) {
        // a vanishing epsilon so the smoothing term does not enter the comparison
        let cfg = CdmConfig { k: v.size(), temperature: 1.0, epsilon: f64::MIN_POSITIVE, ..Default::default() };
        let out = run_corpus(std::slice::from_ref(&s), std::slice::from_ref(&t), &v, &v, &cfg).unwrap();
        prop_assert!(out.alignments[0].pairs.iter().all(|p| p.student == p.teacher && p.student.1 - p.student.0 == 1));
        let n = s.n_positions();
        let oracle = (0..n).map(|i| plain_kl(s.row(i), t.row(i))).sum::<f64>() / n as f64;
        prop_assert!((out.report.kl - oracle).abs() <= 1e-9, "{} vs {}", out.report.kl, oracle);
    }

    #[test]
    fn same_tokenizer_same_logits_is_pure_lm((v, s, _t) in same_tokenizer_case(), alpha in 0.0f64..=1.0) {
        let cfg = CdmConfig { k: v.size(), alpha, ..Default::default() };
        let out = run_corpus(std::slice::from_ref(&s), std::slice::from_ref(&s), &v, &v, &cfg).unwrap();
        prop_assert!(out.report.kl.abs() <= 1e-12);
        let lm = lm_loss(&s, s.token_ids()).unwrap();
        prop_assert!((out.report.lm - lm).abs() <= 1e-12);
        prop_assert!((out.report.combined - (1.0 - alpha) * lm).abs() <= 1e-12);
    }
}
