use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantics::Embedding;
use crate::similarity::mapped_cosine;

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.92;

/// Greedy average-link agglomeration on mapped cosine similarity.
///
/// The closest pair of clusters is merged while its average similarity is at least
/// `threshold`; ties go to the lexicographically smallest pair of cluster slots.
/// Clusters are returned largest first (ties by smallest member), members ascending.
pub fn cluster_vectors<S: Scalar, V: AsRef<[S]>>(
    vs: &[V],
    threshold: S,
) -> Result<Vec<Vec<usize>>> {
    if !(threshold >= S::zero() && threshold <= S::one()) {
        return Err(Error::Precondition(format!(
            "cluster threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let n = vs.len();
    let mut sim = vec![S::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = mapped_cosine(vs[i].as_ref(), vs[j].as_ref());
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(usize, usize, S)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                let s = sim[i * n + j];
                if best.is_none_or(|(_, _, b)| s > b) {
                    best = Some((i, j, s));
                }
            }
        }
        let Some((a, b, s)) = best else { break };
        if s < threshold {
            break;
        }
        let mb = members[b].take().expect("active slot");
        let ma = members[a].as_mut().expect("active slot");
        let (na, nb) = (S::of_usize(ma.len()), S::of_usize(mb.len()));
        ma.extend(mb);
        for k in 0..n {
            if k == a || members[k].is_none() {
                continue;
            }
            let merged = (na * sim[a * n + k] + nb * sim[b * n + k]) / (na + nb);
            sim[a * n + k] = merged;
            sim[k * n + a] = merged;
        }
    }
    let mut clusters: Vec<Vec<usize>> = members
        .into_iter()
        .flatten()
        .map(|mut m| {
            m.sort_unstable();
            m
        })
        .collect();
    clusters.sort_by(|x, y| y.len().cmp(&x.len()).then(x[0].cmp(&y[0])));
    Ok(clusters)
}

pub fn cluster_embeddings(es: &[Embedding], threshold: f64) -> Result<Vec<Vec<usize>>> {
    cluster_vectors(es, threshold)
}
