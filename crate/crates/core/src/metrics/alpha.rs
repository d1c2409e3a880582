//! Krippendorff's alpha for nominal data, via the coincidence matrix.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlphaError {
    #[error("need at least two raters, found {0}")]
    TooFewRaters(usize),
    #[error("no item carries two or more ratings")]
    NoPairableItems,
    #[error("item {item} rated twice by {rater}")]
    DuplicateRating { item: String, rater: String },
}

/// Ratings keyed by (item, rater). Missing cells are simply absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    ratings: BTreeMap<(String, String), String>,
}

impl RatingMatrix {
    pub fn from_triples<I, S>(triples: I) -> Result<Self, AlphaError>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let mut ratings = BTreeMap::new();
        for (item, rater, category) in triples {
            let key = (item.into(), rater.into());
            if ratings.contains_key(&key) {
                return Err(AlphaError::DuplicateRating {
                    item: key.0,
                    rater: key.1,
                });
            }
            ratings.insert(key, category.into());
        }
        Ok(Self { ratings })
    }

    pub fn items(&self) -> BTreeSet<&str> {
        self.ratings.keys().map(|(i, _)| i.as_str()).collect()
    }

    pub fn raters(&self) -> BTreeSet<&str> {
        self.ratings.keys().map(|(_, r)| r.as_str()).collect()
    }

    /// Category values per item, in rater order.
    pub fn units(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut units: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for ((item, _), category) in &self.ratings {
            units.entry(item.as_str()).or_default().push(category.as_str());
        }
        units
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    /// `None` when expected disagreement is zero (every pairable rating falls
    /// in one category), in which case `undefined_perfect` is set.
    pub alpha: Option<f64>,
    pub undefined_perfect: bool,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
    pub pairable_values: usize,
    pub items_used: usize,
    /// Coincidence matrix, `(c, k) -> o_ck`.
    pub coincidences: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Nominal Krippendorff's alpha, `1 - D_o / D_e`, over items with at least
/// two ratings.
pub fn krippendorff_alpha(m: &RatingMatrix) -> Result<AlphaResult, AlphaError> {
    let raters = m.raters().len();
    if raters < 2 {
        return Err(AlphaError::TooFewRaters(raters));
    }
    let mut coincidences: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut items_used = 0;
    for values in m.units().values().filter(|v| v.len() >= 2) {
        items_used += 1;
        let weight = 1.0 / (values.len() - 1) as f64;
        for (i, c) in values.iter().enumerate() {
            for (j, k) in values.iter().enumerate() {
                if i != j {
                    *coincidences.entry(c).or_default().entry(k).or_default() += weight;
                }
            }
        }
    }
    if items_used == 0 {
        return Err(AlphaError::NoPairableItems);
    }

    let marginals: BTreeMap<&str, f64> = coincidences
        .iter()
        .map(|(c, row)| (*c, row.values().sum()))
        .collect();
    let n: f64 = marginals.values().sum();
    let mut observed = 0.0;
    for (c, row) in &coincidences {
        for (k, o) in row {
            if c != k {
                observed += o;
            }
        }
    }
    observed /= n;
    let mut expected = 0.0;
    for (c, nc) in &marginals {
        for (k, nk) in &marginals {
            if c != k {
                expected += nc * nk;
            }
        }
    }
    expected /= n * (n - 1.0);

    let undefined_perfect = expected == 0.0;
    Ok(AlphaResult {
        alpha: (!undefined_perfect).then(|| 1.0 - observed / expected),
        undefined_perfect,
        observed_disagreement: observed,
        expected_disagreement: expected,
        pairable_values: n.round() as usize,
        items_used,
        coincidences: coincidences
            .into_iter()
            .map(|(c, row)| {
                (
                    c.to_string(),
                    row.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                )
            })
            .collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Textbook pairwise form: observed disagreement averages mismatching
    /// within-unit pairs, expected disagreement enumerates every ordered pair
    /// of pairable values across the whole data set.
    pub(crate) fn alpha_by_pairs(units: &[Vec<&str>]) -> Option<f64> {
        let units: Vec<&Vec<&str>> = units.iter().filter(|u| u.len() >= 2).collect();
        let all: Vec<&str> = units.iter().flat_map(|u| u.iter().copied()).collect();
        let n = all.len() as f64;
        let mut d_o = 0.0;
        for u in &units {
            let mut mismatches = 0.0;
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if i != j && u[i] != u[j] {
                        mismatches += 1.0;
                    }
                }
            }
            d_o += mismatches / (u.len() as f64 - 1.0);
        }
        d_o /= n;
        let mut d_e = 0.0;
        for a in 0..all.len() {
            for b in 0..all.len() {
                if a != b && all[a] != all[b] {
                    d_e += 1.0;
                }
            }
        }
        d_e /= n * (n - 1.0);
        (d_e > 0.0).then(|| 1.0 - d_o / d_e)
    }

    fn matrix(rows: &[(&str, &str, &str)]) -> RatingMatrix {
        RatingMatrix::from_triples(rows.iter().copied()).unwrap()
    }

    #[test]
    fn perfect_agreement_is_one() {
        let m = matrix(&[
            ("1", "a", "post"),
            ("1", "b", "post"),
            ("2", "a", "pre"),
            ("2", "b", "pre"),
            ("3", "a", "illegible"),
            ("3", "b", "illegible"),
        ]);
        assert_eq!(krippendorff_alpha(&m).unwrap().alpha, Some(1.0));
    }

    #[test]
    fn single_category_is_undefined_perfect() {
        let m = matrix(&[("1", "a", "x"), ("1", "b", "x"), ("2", "a", "x"), ("2", "b", "x")]);
        let r = krippendorff_alpha(&m).unwrap();
        assert!(r.undefined_perfect);
        assert_eq!(r.alpha, None);
    }

    #[test]
    fn known_small_case() {
        // 4 items, two raters, one disagreement:
        // o(a,a)=2, o(b,b)=4, o(a,b)=o(b,a)=1; n_a=3, n_b=5, n=8
        // alpha = 1 - (n-1) * 2 / (2 * 3 * 5) = 1 - 14/30
        let m = matrix(&[
            ("1", "r1", "a"),
            ("1", "r2", "a"),
            ("2", "r1", "b"),
            ("2", "r2", "b"),
            ("3", "r1", "b"),
            ("3", "r2", "b"),
            ("4", "r1", "a"),
            ("4", "r2", "b"),
        ]);
        let alpha = krippendorff_alpha(&m).unwrap().alpha.unwrap();
        assert!((alpha - (1.0 - 14.0 / 30.0)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let one_rater = matrix(&[("1", "a", "x"), ("2", "a", "y")]);
        assert_eq!(krippendorff_alpha(&one_rater), Err(AlphaError::TooFewRaters(1)));
        let unpaired = matrix(&[("1", "a", "x"), ("2", "b", "y")]);
        assert_eq!(krippendorff_alpha(&unpaired), Err(AlphaError::NoPairableItems));
        assert!(RatingMatrix::from_triples([("1", "a", "x"), ("1", "a", "y")]).is_err());
    }

    #[test]
    fn missing_ratings_are_skipped_per_item() {
        let m = matrix(&[
            ("1", "a", "x"),
            ("1", "b", "x"),
            ("1", "c", "y"),
            ("2", "a", "y"),
            ("2", "c", "y"),
            ("3", "b", "x"),
        ]);
        let units = m.units();
        let expected = alpha_by_pairs(&units.values().cloned().collect::<Vec<_>>()).unwrap();
        let got = krippendorff_alpha(&m).unwrap();
        assert_eq!(got.items_used, 2);
        assert!((got.alpha.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ten_item_matrix_matches_pairwise_oracle() {
        let cats = ["pre", "post", "illegible"];
        let r1 = [0, 1, 1, 2, 0, 0, 1, 2, 1, 0];
        let r2 = [0, 1, 2, 2, 0, 1, 1, 2, 1, 0];
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((i.to_string(), "wf".to_string(), cats[r1[i]].to_string()));
            rows.push((i.to_string(), "rh".to_string(), cats[r2[i]].to_string()));
        }
        let m = RatingMatrix::from_triples(rows).unwrap();
        let units: Vec<Vec<&str>> = m.units().into_values().collect();
        let oracle = alpha_by_pairs(&units).unwrap();
        let got = krippendorff_alpha(&m).unwrap().alpha.unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn random_ratings_give_alpha_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut rows = Vec::new();
        for i in 0..2000 {
            for rater in ["a", "b"] {
                rows.push((i.to_string(), rater.to_string(), rng.random_range(0..3).to_string()));
            }
        }
        let alpha = krippendorff_alpha(&RatingMatrix::from_triples(rows).unwrap())
            .unwrap()
            .alpha
            .unwrap();
        assert!(alpha.abs() < 0.05, "alpha {alpha}");
    }
}
