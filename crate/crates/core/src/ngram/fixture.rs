use super::{NGramError, NGramIndex, SmoothingSpec};

/// Verb-form frequencies in The Pile, sixteen verbs times two forms.
pub const PILE_FIXTURE_CSV: &str = include_str!("../../fixtures/pile_verb_counts.csv");

/// Parsed `(word, count)` rows of [`PILE_FIXTURE_CSV`], in file order.
pub fn pile_fixture_counts() -> Vec<(String, u64)> {
    let mut rdr = csv::Reader::from_reader(PILE_FIXTURE_CSV.as_bytes());
    rdr.deserialize::<(String, u64)>()
        .map(|r| r.expect("bundled fixture is well formed"))
        .collect()
}

/// Read-only unigram index over the fixture counts.
pub fn pile_fixture(smoothing: SmoothingSpec) -> Result<NGramIndex, NGramError> {
    let rows = pile_fixture_counts();
    NGramIndex::from_unigram_counts(rows.iter().map(|(w, c)| (w.as_str(), *c)), smoothing)
}
