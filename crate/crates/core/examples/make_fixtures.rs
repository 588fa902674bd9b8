//! Writes the built-in fixture corpora to a directory:
//!
//! ```text
//! cargo run -p cdm-core --example make_fixtures -- crates/cli/tests/fixtures
//! ```

use std::fs;
use std::path::Path;

use cdm_core::fixtures::{split_word_fixture, toy_corpus, Corpus};
use cdm_core::tensorio::write_dump;

fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<(), Box<dyn std::error::Error>> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("student_vocab.json"), corpus.student_vocab.to_json_string() + "\n")?;
    fs::write(dir.join("teacher_vocab.json"), corpus.teacher_vocab.to_json_string() + "\n")?;
    write_dump(&corpus.student, dir.join("student.cdmp"))?;
    write_dump(&corpus.teacher, dir.join("teacher.cdmp"))?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    write_corpus(&root.join("toy"), &toy_corpus())?;
    write_corpus(&root.join("split_word"), &split_word_fixture().corpus)?;
    println!("wrote fixtures under {}", root.display());
    Ok(())
}
