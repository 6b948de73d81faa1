//! Regenerate the bundled synthetic corpora under fixtures/.
//!
//! ```bash
//! cargo run -p seover-core --example gen_fixtures
//! ```

use std::path::Path;

use seover_core::corpus::write_corpus;
use seover_core::synth::{context_corpus, keyword_corpus};

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    std::fs::create_dir_all(&root).expect("create fixtures dir");
    write_corpus(&keyword_corpus(17), &root.join("keyword_corpus.jsonl")).unwrap();
    write_corpus(&context_corpus(23), &root.join("context_corpus.jsonl")).unwrap();
    println!("wrote {}", root.display());
}
