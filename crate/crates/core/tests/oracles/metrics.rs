//! Brute-force caption-metric oracles over string n-grams, linear-scan
//! counting, subsequence enumeration for LCS and dense TF-IDF vectors.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use synthaug::metrics::CaptionPair;

pub const VOCAB: &[&str] = &["a", "dog", "cat", "runs", "on", "grass"];

fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return vec![];
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

fn count(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| *x == g).count()
}

pub fn oracle_bleu(corpus: &[CaptionPair]) -> f64 {
    let mut prec = 1.0;
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for p in corpus {
            let h = grams(&p.hypothesis, n);
            t += h.len();
            let mut uniq: Vec<&String> = h.iter().collect();
            uniq.sort();
            uniq.dedup();
            for g in uniq {
                let best = p.references.iter().map(|r| count(&grams(r, n), g)).max().unwrap();
                m += count(&h, g).min(best);
            }
        }
        if t == 0 || m == 0 {
            return 0.0;
        }
        prec *= m as f64 / t as f64;
    }
    let c: usize = corpus.iter().map(|p| p.hypothesis.len()).sum();
    let r: usize = corpus
        .iter()
        .map(|p| {
            let mut lens: Vec<usize> = p.references.iter().map(|r| r.len()).collect();
            lens.sort_by_key(|&l| ((l as i64 - p.hypothesis.len() as i64).abs(), l));
            lens[0]
        })
        .sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * prec.powf(0.25)
}

fn is_subsequence(s: &[&String], t: &[String]) -> bool {
    let mut it = t.iter();
    s.iter().all(|x| it.any(|y| y == *x))
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn oracle_rouge(p: &CaptionPair) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut best_p = 0.0f64;
    let mut best_r = 0.0f64;
    for r in &p.references {
        let l = oracle_lcs(&p.hypothesis, r) as f64;
        if l > 0.0 {
            best_p = best_p.max(l / p.hypothesis.len() as f64);
            best_r = best_r.max(l / r.len() as f64);
        }
    }
    if best_p == 0.0 {
        return 0.0;
    }
    (1.0 + beta2) * best_p * best_r / (best_r + beta2 * best_p)
}

pub fn oracle_cider(corpus: &[CaptionPair]) -> f64 {
    let n_img = corpus.len() as f64;
    let mut total = 0.0;
    for p in corpus {
        let mut per_ref = 0.0;
        for r in &p.references {
            let mut per_n = 0.0;
            for n in 1..=4 {
                let mut space: Vec<String> = grams(&p.hypothesis, n).into_iter().chain(grams(r, n)).collect();
                space.sort();
                space.dedup();
                let idf = |g: &String| {
                    let df = corpus
                        .iter()
                        .filter(|q| q.references.iter().any(|rr| grams(rr, n).contains(g)))
                        .count();
                    n_img.ln() - (df.max(1) as f64).ln()
                };
                let hv: Vec<f64> = space.iter().map(|g| count(&grams(&p.hypothesis, n), g) as f64 * idf(g)).collect();
                let rv: Vec<f64> = space.iter().map(|g| count(&grams(r, n), g) as f64 * idf(g)).collect();
                let dot: f64 = hv.iter().zip(&rv).map(|(h, r)| h.min(*r) * r).sum();
                let nh = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nr = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nh > 0.0 && nr > 0.0 {
                    let delta = p.hypothesis.len() as f64 - r.len() as f64;
                    per_n += dot / (nh * nr) * (-delta * delta / 72.0).exp();
                }
            }
            per_ref += per_n / 4.0;
        }
        total += per_ref / p.references.len() as f64 * 10.0;
    }
    total / n_img
}

pub fn sentence(rng: &mut ChaCha8Rng, min: usize) -> Vec<String> {
    let len = rng.random_range(min..=6);
    (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect()
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<CaptionPair> {
    let images = rng.random_range(2..=5);
    (0..images)
        .map(|i| {
            let refs = (0..rng.random_range(1..=3)).map(|_| sentence(rng, 1)).collect();
            let hyp = if rng.random_bool(0.3) {
                // Copy a reference now and then so high-overlap cases occur.
                let r: &Vec<Vec<String>> = &refs;
                r[0].clone()
            } else {
                sentence(rng, 0)
            };
            CaptionPair::new(format!("img{i}"), hyp, refs).unwrap()
        })
        .collect()
}
