//! Small deterministic corpora used by the tests, the benches and the
//! `make_fixtures` example that writes them to disk.

use crate::tensorio::LogitsMatrix;
use crate::vocab::Vocabulary;

/// Paired vocabularies and dumps for one corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub student_vocab: Vocabulary,
    pub teacher_vocab: Vocabulary,
    pub student: Vec<LogitsMatrix>,
    pub teacher: Vec<LogitsMatrix>,
}

type Spans = Vec<((usize, usize), (usize, usize))>;

/// Comma-split sentences where the two tokenizers disagree on one word right
/// after a comma.
#[derive(Debug, Clone)]
pub struct SplitWordFixture {
    pub corpus: Corpus,
    /// correct grouping, one list per record
    pub gold: Vec<Spans>,
    /// grouping that fuses the comma with the first piece of the split word
    pub fused: Vec<Spans>,
}

const CONFIDENT: f32 = 10.0;

/// Rows are confident (one large logit on the next token) except at the
/// `ambiguous` positions, which are uniform.
fn confidence_rows(ids: &[u32], vocab_size: usize, ambiguous: &[bool]) -> LogitsMatrix {
    let rows: Vec<Vec<f32>> = (0..ids.len())
        .map(|i| {
            let mut row = vec![0.0; vocab_size];
            if !ambiguous[i] {
                let next = ids.get(i + 1).copied().unwrap_or(ids[i]);
                row[next as usize] = CONFIDENT;
            }
            row
        })
        .collect();
    LogitsMatrix::from_rows(ids.to_vec(), &rows).expect("fixture rows are valid")
}

fn ids_of(v: &Vocabulary, tokens: &[&str]) -> Vec<u32> {
    tokens.iter().map(|t| v.id(t).unwrap_or_else(|| panic!("{t:?} missing from fixture vocabulary"))).collect()
}

fn is_ambiguous(v: &Vocabulary, id: u32) -> bool {
    let text = &v.canonical(id).expect("fixture id").text;
    text == "," || text == "is"
}

fn gold_and_fused(comma: usize, len_a: usize) -> (Spans, Spans) {
    // A has the word whole at comma + 1, B splits it into comma + 1, comma + 2
    let mut gold = Vec::new();
    let mut fused = Vec::new();
    for i in 0..comma {
        gold.push(((i, i + 1), (i, i + 1)));
        fused.push(((i, i + 1), (i, i + 1)));
    }
    gold.push(((comma, comma + 1), (comma, comma + 1)));
    gold.push(((comma + 1, comma + 2), (comma + 1, comma + 3)));
    fused.push(((comma, comma + 1), (comma, comma + 2)));
    fused.push(((comma + 1, comma + 2), (comma + 2, comma + 3)));
    for i in comma + 2..len_a {
        gold.push(((i, i + 1), (i + 1, i + 2)));
        fused.push(((i, i + 1), (i + 1, i + 2)));
    }
    (gold, fused)
}

/// "Moon Knight is Marvel, Batman is DC" and "Dodge is American, Volkswagen
/// is German", with the split words `Bat|man` and `Volks|wagen` on the
/// teacher side. Comma and "is" positions carry uniform (maximum-entropy)
/// logits on both sides; every other position is confident.
pub fn split_word_fixture() -> SplitWordFixture {
    let student_vocab = Vocabulary::from_tokens([
        "Moon",
        "▁Knight",
        "▁is",
        "▁Marvel",
        ",",
        "▁Batman",
        "▁DC",
        "D",
        "odge",
        "▁American",
        "▁Volkswagen",
        "▁German",
    ])
    .expect("distinct tokens");
    let teacher_vocab = Vocabulary::from_tokens([
        "Moon",
        "ĠKnight",
        "Ġis",
        "ĠMarvel",
        ",",
        "ĠBat",
        "man",
        "ĠDC",
        "D",
        "odge",
        "ĠAmerican",
        "ĠVolks",
        "wagen",
        "ĠGerman",
    ])
    .expect("distinct tokens");

    let sentences: [(&[&str], &[&str]); 2] = [
        (
            &["Moon", "▁Knight", "▁is", "▁Marvel", ",", "▁Batman", "▁is", "▁DC"],
            &["Moon", "ĠKnight", "Ġis", "ĠMarvel", ",", "ĠBat", "man", "Ġis", "ĠDC"],
        ),
        (
            &["D", "odge", "▁is", "▁American", ",", "▁Volkswagen", "▁is", "▁German"],
            &["D", "odge", "Ġis", "ĠAmerican", ",", "ĠVolks", "wagen", "Ġis", "ĠGerman"],
        ),
    ];

    let mut student = Vec::new();
    let mut teacher = Vec::new();
    let mut gold = Vec::new();
    let mut fused = Vec::new();
    for (a, b) in sentences {
        for (v, toks, out) in [(&student_vocab, a, &mut student), (&teacher_vocab, b, &mut teacher)] {
            let ids = ids_of(v, toks);
            let ambiguous: Vec<bool> = ids.iter().map(|&id| is_ambiguous(v, id)).collect();
            out.push(confidence_rows(&ids, v.size(), &ambiguous));
        }
        let (g, f) = gold_and_fused(4, a.len());
        gold.push(g);
        fused.push(f);
    }
    SplitWordFixture { corpus: Corpus { student_vocab, teacher_vocab, student, teacher }, gold, fused }
}

pub const TOY_STUDENT_VOCAB: [&str; 8] = ["▁the", "▁cats", "▁sat", "▁on", "▁mat", "s", "▁dog", "."];
pub const TOY_TEACHER_VOCAB: [&str; 8] = ["Ġthe", "Ġcat", "Ġsat", "Ġon", "Ġmats", "Ġdo", "g", "s"];

/// Token sequences of the toy corpus, student then teacher.
pub const TOY_SENTENCES: [(&[&str], &[&str]); 3] = [
    (&["▁the", "▁cats", "▁sat", "▁on", "▁the", "▁mat", "s"], &["Ġthe", "Ġcat", "s", "Ġsat", "Ġon", "Ġthe", "Ġmats"]),
    (&["▁the", "▁dog", "▁sat", "▁on", "▁the", "▁cats"], &["Ġthe", "Ġdo", "g", "Ġsat", "Ġon", "Ġthe", "Ġcat", "s"]),
    (
        &["▁the", "▁dog", "s", "▁sat", "▁on", "▁the", "▁mat", "s"],
        &["Ġthe", "Ġdo", "g", "s", "Ġsat", "Ġon", "Ġthe", "Ġmats"],
    ),
];

/// Smooth deterministic pseudo-noise in `[-1, 1]`.
fn wobble(sentence: usize, position: usize, column: usize, salt: f64) -> f32 {
    let x = 0.91 * sentence as f64 + 1.37 * position as f64 + 2.11 * column as f64 + salt;
    ((x * 1.618).sin() * (x * 0.577).cos()) as f32
}

/// Logits that favour the next token of the sentence (and, more weakly, the
/// token after it), over a layer of pseudo-noise.
fn toy_rows(ids: &[u32], vocab_size: usize, sentence: usize, salt: f64) -> LogitsMatrix {
    let rows: Vec<Vec<f32>> = (0..ids.len())
        .map(|i| {
            let mut row: Vec<f32> = (0..vocab_size).map(|j| wobble(sentence, i, j, salt)).collect();
            if let Some(&next) = ids.get(i + 1) {
                row[next as usize] += 3.0;
            }
            if let Some(&after) = ids.get(i + 2) {
                row[after as usize] += 1.5;
            }
            // quantize to a 1/256 grid so every tool reads the same values
            row.iter().map(|v| (v * 256.0).round() / 256.0).collect()
        })
        .collect();
    LogitsMatrix::from_rows(ids.to_vec(), &rows).expect("fixture rows are valid")
}

/// Two 8-token vocabularies in different space-marker conventions and three
/// sentences tokenized by both.
pub fn toy_corpus() -> Corpus {
    let student_vocab = Vocabulary::from_tokens(TOY_STUDENT_VOCAB).expect("distinct tokens");
    let teacher_vocab = Vocabulary::from_tokens(TOY_TEACHER_VOCAB).expect("distinct tokens");
    let mut student = Vec::new();
    let mut teacher = Vec::new();
    for (s, (a, b)) in TOY_SENTENCES.iter().enumerate() {
        student.push(toy_rows(&ids_of(&student_vocab, a), student_vocab.size(), s, 0.0));
        teacher.push(toy_rows(&ids_of(&teacher_vocab, b), teacher_vocab.size(), s, 0.5));
    }
    Corpus { student_vocab, teacher_vocab, student, teacher }
}
