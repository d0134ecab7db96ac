//! Majority voting over sampled answers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    /// Index of the sample whose text is kept.
    pub winner: usize,
    pub votes: usize,
    pub total: usize,
}

pub fn normalize_vote(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Most frequent answer after normalization; ties go to the answer whose
/// first occurrence comes first. `None` for no samples.
pub fn majority_vote<S: AsRef<str>>(samples: &[S]) -> Option<Vote> {
    let keys: Vec<String> = samples.iter().map(|s| normalize_vote(s.as_ref())).collect();
    let mut best: Option<Vote> = None;
    for (i, key) in keys.iter().enumerate() {
        if keys[..i].contains(key) {
            continue;
        }
        let votes = keys.iter().filter(|k| *k == key).count();
        if best.is_none_or(|b| votes > b.votes) {
            best = Some(Vote { winner: i, votes, total: samples.len() });
        }
    }
    best
}
