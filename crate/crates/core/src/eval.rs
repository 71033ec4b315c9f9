//! STS-style rank evaluation and hypersphere alignment / uniformity.

use std::fs;
use std::path::Path;

use crate::encoder::StudentParams;
use crate::error::{Error, Result};
use crate::numerics::{cosine, normalized, spearman, squared_distance};

/// Gold scores at or above this value mark a positive pair for alignment.
pub const POSITIVE_PAIR_SCORE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StsPair {
    pub a: String,
    pub b: String,
    pub gold: f64,
}

impl StsPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, gold: f64) -> Result<Self> {
        if !(0.0..=5.0).contains(&gold) {
            return Err(Error::InvalidConfig(format!(
                "gold score {gold} outside [0, 5]"
            )));
        }
        Ok(Self {
            a: a.into(),
            b: b.into(),
            gold,
        })
    }
}

/// Reads `id_a\tid_b\tscore` lines.
pub fn load_sts(path: &Path) -> Result<Vec<StsPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| Error::MalformedFile {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(n + 1, "expected three tab-separated fields"));
        }
        let gold: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad(n + 1, "score is not a number"))?;
        pairs.push(
            StsPair::new(fields[0], fields[1], gold)
                .map_err(|_| bad(n + 1, "score outside [0, 5]"))?,
        );
    }
    Ok(pairs)
}

/// Spearman correlation between gold scores and cosines of the
/// pre-projection hidden vectors (dropout off).
pub fn sts_eval(student: &StudentParams, pairs: &[StsPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateInput("need at least two pairs"));
    }
    let mut predicted = Vec::with_capacity(pairs.len());
    for p in pairs {
        predicted.push(cosine(&student.embed(&p.a)?, &student.embed(&p.b)?)?);
    }
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    spearman(&predicted, &gold)
}

/// Mean squared distance between L2-normalized positive pairs.
pub fn alignment(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for (i, (x, y)) in pairs.iter().enumerate() {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let x = normalized(x).map_err(|_| Error::ZeroNormVector { index: i })?;
        let y = normalized(y).map_err(|_| Error::ZeroNormVector { index: i })?;
        total += squared_distance(&x, &y);
    }
    Ok(total / pairs.len() as f64)
}

/// `log` of the mean Gaussian potential `e^{−2‖x−y‖²}` over distinct unordered pairs
/// of L2-normalized points.
pub fn uniformity(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(
            "uniformity needs at least two points",
        ));
    }
    let unit = points
        .iter()
        .enumerate()
        .map(|(i, p)| normalized(p).map_err(|_| Error::ZeroNormVector { index: i }))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            if unit[i].len() != unit[j].len() {
                return Err(Error::DimensionMismatch {
                    expected: unit[i].len(),
                    got: unit[j].len(),
                });
            }
            sum += (-2.0 * squared_distance(&unit[i], &unit[j])).exp();
            count += 1;
        }
    }
    Ok((sum / count as f64).ln())
}

/// Dev-set report used during training and by the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub spearman: f64,
    /// `NaN` when no pair reaches [`POSITIVE_PAIR_SCORE`].
    pub alignment: f64,
    pub uniformity: f64,
}

pub fn evaluate(student: &StudentParams, pairs: &[StsPair]) -> Result<EvalReport> {
    let spearman = sts_eval(student, pairs)?;
    let mut positives = Vec::new();
    for p in pairs.iter().filter(|p| p.gold >= POSITIVE_PAIR_SCORE) {
        positives.push((student.embed(&p.a)?, student.embed(&p.b)?));
    }
    let alignment = if positives.is_empty() {
        f64::NAN
    } else {
        alignment(&positives)?
    };
    let mut ids: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.a.as_str(), p.b.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let points = ids
        .iter()
        .map(|id| student.embed(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        spearman,
        alignment,
        uniformity: uniformity(&points)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Head, HeadKind, StudentDims, Tensors};
    use proptest::prelude::*;

    fn student(rows: &[Vec<f64>]) -> StudentParams {
        let dim = rows[0].len();
        let dims = StudentDims {
            hidden: dim,
            grounded: 2,
            teacher_text: 2,
            teacher_visual: 2,
        };
        let heads = HeadKind::ALL.map(|k| match k {
            HeadKind::Simcse => Head::zeros(dim, dim),
            HeadKind::Grounded => Head::zeros(dim, 2),
            _ => Head::zeros(2, 2),
        });
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        let base = rows.iter().flatten().copied().collect();
        StudentParams::from_parts(ids, dims, 0.1, Tensors { base, heads }).unwrap()
    }

    fn fixture() -> StudentParams {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                vec![
                    (i as f64 * 0.9).cos(),
                    (i as f64 * 0.9).sin(),
                    0.2 * i as f64 - 0.5,
                ]
            })
            .collect();
        student(&rows)
    }

    fn pairs_with(st: &StudentParams, score: impl Fn(f64) -> f64) -> Vec<StsPair> {
        let mut out = Vec::new();
        for (a, b) in [(0, 1), (0, 3), (1, 4), (2, 5), (3, 5), (1, 2)] {
            let (a, b) = (format!("s{a}"), format!("s{b}"));
            let c = cosine(&st.embed(&a).unwrap(), &st.embed(&b).unwrap()).unwrap();
            out.push(StsPair::new(a, b, score(c)).unwrap());
        }
        out
    }

    #[test]
    fn sts_perfect_and_reversed() {
        let st = fixture();
        let up = pairs_with(&st, |c| 2.5 + 2.5 * c);
        assert!((sts_eval(&st, &up).unwrap() - 1.0).abs() < 1e-15);
        let down = pairs_with(&st, |c| 2.5 - 2.5 * c);
        assert!((sts_eval(&st, &down).unwrap() + 1.0).abs() < 1e-15);
        let flat = pairs_with(&st, |_| 3.0);
        assert!(matches!(
            sts_eval(&st, &flat),
            Err(Error::DegenerateInput(_))
        ));
        assert!(sts_eval(&st, &up[..1]).is_err());
    }

    #[test]
    fn sts_matches_rank_oracle() {
        let st = fixture();
        let golds = [4.2, 0.5, 3.3, 1.0, 2.2, 4.9];
        let mut pairs = pairs_with(&st, |_| 0.0);
        for (p, g) in pairs.iter_mut().zip(golds) {
            p.gold = g;
        }
        let pred: Vec<f64> = pairs
            .iter()
            .map(|p| cosine(&st.embed(&p.a).unwrap(), &st.embed(&p.b).unwrap()).unwrap())
            .collect();
        // brute-force ranks without ties, then 1 − 6Σd²/(n(n²−1))
        let rank = |v: &[f64], i: usize| v.iter().filter(|&&x| x < v[i]).count() as f64 + 1.0;
        let n = pred.len() as f64;
        let d2: f64 = (0..pred.len())
            .map(|i| (rank(&pred, i) - rank(&golds, i)).powi(2))
            .sum();
        let expected = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!((sts_eval(&st, &pairs).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn alignment_fixtures() {
        assert_eq!(alignment(&[(vec![1.0, 2.0], vec![2.0, 4.0])]).unwrap(), 0.0);
        assert_eq!(alignment(&[(vec![1.0, 0.0], vec![0.0, 1.0])]).unwrap(), 2.0);
        assert!(matches!(alignment(&[]), Err(Error::EmptySequence)));
        let pairs = vec![
            (vec![1.0, 0.0], vec![0.0, 1.0]),
            (vec![1.0, 0.0], vec![1.0, 0.0]),
            (vec![0.0, 3.0], vec![0.0, -1.0]),
        ];
        assert!((alignment(&pairs).unwrap() - (2.0 + 0.0 + 4.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniformity_fixtures() {
        assert_eq!(uniformity(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap(), 0.0);
        assert!((uniformity(&[vec![0.6, 0.8], vec![-0.6, -0.8]]).unwrap() + 8.0).abs() < 1e-12);
        assert!(uniformity(&[vec![1.0]]).is_err());
        let pts = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        // four pairs at squared distance 2, two at 4
        let expected = ((4.0 * (-4.0f64).exp() + 2.0 * (-8.0f64).exp()) / 6.0).ln();
        assert!((uniformity(&pts).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let st = fixture();
        let pairs = pairs_with(&st, |c| 2.5 + 2.5 * c);
        assert_eq!(
            evaluate(&st, &pairs).unwrap(),
            evaluate(&st, &pairs).unwrap()
        );
    }

    #[test]
    fn sts_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sts.tsv");
        fs::write(&p, "a\tb\t4.5\nc\td\t0\n").unwrap();
        let pairs = load_sts(&p).unwrap();
        assert_eq!(pairs[0], StsPair::new("a", "b", 4.5).unwrap());
        fs::write(&p, "a\tb\t7\n").unwrap();
        assert!(load_sts(&p).is_err());
    }

    proptest! {
        #[test]
        fn sts_rank_only(scale in 0.1f64..2.0, shift in 0.0f64..1.0) {
            let st = fixture();
            let golds = [4.2, 0.5, 3.3, 1.0, 2.2, 4.9];
            let mut a = pairs_with(&st, |_| 0.0);
            let mut b = a.clone();
            for ((p, q), g) in a.iter_mut().zip(b.iter_mut()).zip(golds) {
                p.gold = g;
                q.gold = ((g / 5.0).powf(scale) * (5.0 - shift)).min(5.0);
            }
            prop_assert_eq!(sts_eval(&st, &a).unwrap(), sts_eval(&st, &b).unwrap());
        }

        #[test]
        fn alignment_permutation_invariant(seed in any::<u64>()) {
            let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..5u64)
                .map(|i| {
                    let x = ((seed ^ i) % 97) as f64 + 1.0;
                    (vec![x, 1.0, -0.5], vec![1.0, x.sin(), 2.0])
                })
                .collect();
            let before = alignment(&pairs).unwrap();
            pairs.reverse();
            prop_assert!((alignment(&pairs).unwrap() - before).abs() < 1e-15);
        }

        #[test]
        fn duplicate_point_never_lowers_potential(
            pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..6)
                .prop_filter("non-zero", |v| v.iter().all(|p| crate::numerics::norm(p) > 1e-3)),
        ) {
            let u = uniformity(&pts).unwrap();
            prop_assert!(u <= 1e-15);
            let mut more = pts.clone();
            more.push(pts[0].clone());
            // the duplicate adds one self-distance term of e^0 = 1 plus copies of existing terms
            let with_dup = uniformity(&more).unwrap();
            let n = pts.len() as f64;
            let mean_before = u.exp();
            let row0: f64 = pts[1..].iter().map(|p| {
                let (a, b) = (normalized(&pts[0]).unwrap(), normalized(p).unwrap());
                (-2.0 * squared_distance(&a, &b)).exp()
            }).sum();
            let total_after = mean_before * n * (n - 1.0) / 2.0 + row0 + 1.0;
            let expect = (total_after / ((n + 1.0) * n / 2.0)).ln();
            prop_assert!((with_dup - expect).abs() < 1e-10);
        }
    }
}
