//! Minimum set cover over small families: exhaustive search up to
//! [`EXACT_LIMIT`] candidate sets, greedy with lowest-index tie-breaking above.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Largest family searched exhaustively.
pub const EXACT_LIMIT: usize = 20;

/// Fixed-size bitset over atom indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn full(len: usize) -> Self {
        let mut b = Self::new(len);
        for i in 0..len {
            b.insert(i);
        }
        b
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_subset(&self, other: &Bits) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    /// Number of elements in `self` not in `covered`.
    pub fn count_new(&self, covered: &Bits) -> usize {
        self.words
            .iter()
            .zip(&covered.words)
            .map(|(a, b)| (a & !b).count_ones() as usize)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Exhaustive,
    /// Pairwise disjoint family: the optimum is read off directly.
    Partition,
    Greedy,
}

impl Method {
    pub fn is_exact(&self) -> bool {
        !matches!(self, Method::Greedy)
    }
}

fn is_disjoint(sets: &[Bits], len: usize) -> bool {
    let mut all = Bits::new(len);
    let mut total = 0;
    for s in sets {
        all.union_with(s);
        total += s.count();
    }
    total == all.count()
}

/// Families above this size skip the quadratic dominance pass.
const DOMINANCE_LIMIT: usize = 4096;

/// Drop duplicates and sets strictly contained in another set. The first
/// occurrence of each maximal set is kept, so order is preserved. Large
/// families are only deduplicated.
pub fn maximal_sets(sets: &[Bits]) -> Vec<Bits> {
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&Bits> = sets.iter().filter(|s| seen.insert(*s)).collect();
    if unique.len() > DOMINANCE_LIMIT {
        return unique.into_iter().cloned().collect();
    }
    unique
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            !unique
                .iter()
                .enumerate()
                .any(|(j, t)| j != *i && s.is_subset(t) && *s != t)
        })
        .map(|(_, s)| (*s).clone())
        .collect()
}

/// Lazy greedy: repeatedly take the set of largest marginal gain (lowest
/// index on ties) until `done` holds. Gains never increase, so stale heap
/// keys are upper bounds.
fn lazy_greedy(
    family: &[Bits],
    len: usize,
    gain: impl Fn(&Bits, &Bits) -> f64,
    done: impl Fn(&Bits) -> bool,
) -> usize {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Key(f64, Reverse<usize>);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
        }
    }

    let mut covered = Bits::new(len);
    let mut heap: BinaryHeap<Key> = family
        .iter()
        .enumerate()
        .map(|(i, s)| Key(gain(s, &covered), Reverse(i)))
        .collect();
    let mut count = 0;
    while !done(&covered) {
        let Some(Key(_, Reverse(i))) = heap.pop() else {
            break;
        };
        let g = gain(&family[i], &covered);
        let fresh = Key(g, Reverse(i));
        if heap.peek().is_none_or(|top| fresh >= *top) {
            if g <= 0.0 {
                break;
            }
            covered.union_with(&family[i]);
            count += 1;
        } else {
            heap.push(fresh);
        }
    }
    count
}

/// Visit all `k`-subsets of `0..m` in lexicographic order until `f` returns true.
fn any_combination(m: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) -> bool {
    if k > m {
        return false;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if f(&idx) {
            return true;
        }
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if idx[i] < m - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Minimum number of `sets` covering `universe`; `None` if the family does
/// not cover it.
pub fn min_cover(sets: &[Bits], universe: &Bits) -> Option<(usize, Method)> {
    let mut all = Bits::new(universe.len);
    for s in sets {
        all.union_with(s);
    }
    if !universe.is_subset(&all) {
        return None;
    }
    if universe.count() == 0 {
        return Some((0, Method::Exhaustive));
    }
    let family = maximal_sets(sets);
    if is_disjoint(&family, universe.len) {
        let outside = complement(universe);
        let k = family
            .iter()
            .filter(|s| s.count() > 0 && !s.is_subset(&outside))
            .count();
        return Some((k, Method::Partition));
    }
    if family.len() <= EXACT_LIMIT {
        for k in 1..=family.len() {
            let hit = any_combination(family.len(), k, |idx| {
                let mut u = Bits::new(universe.len);
                for &i in idx {
                    u.union_with(&family[i]);
                }
                universe.is_subset(&u)
            });
            if hit {
                return Some((k, Method::Exhaustive));
            }
        }
        unreachable!("full family covers the universe");
    }
    let count = lazy_greedy(
        &family,
        universe.len,
        |s, c| s.count_new(c) as f64,
        |c| universe.is_subset(c),
    );
    Some((count, Method::Greedy))
}

fn complement(b: &Bits) -> Bits {
    let mut c = Bits::new(b.len);
    for i in 0..b.len {
        if !b.contains(i) {
            c.insert(i);
        }
    }
    c
}

fn mass_of(set: &Bits, masses: &[f64]) -> f64 {
    set.iter().map(|i| masses[i]).sum()
}

/// Minimum number of `sets` whose union has mass strictly above `target`.
/// Returns the reachable mass as the error when even the whole family falls
/// short.
pub fn min_mass_cover(
    sets: &[Bits],
    masses: &[f64],
    target: f64,
) -> std::result::Result<(usize, Method), f64> {
    let n = masses.len();
    let mut all = Bits::new(n);
    for s in sets {
        all.union_with(s);
    }
    let reachable = mass_of(&all, masses);
    if reachable <= target {
        return Err(reachable);
    }
    let family = maximal_sets(sets);
    if is_disjoint(&family, n) {
        let mut ms: Vec<f64> = family.iter().map(|s| mass_of(s, masses)).collect();
        ms.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        for (i, m) in ms.iter().enumerate() {
            acc += m;
            if acc > target {
                return Ok((i + 1, Method::Partition));
            }
        }
        return Err(acc);
    }
    if family.len() <= EXACT_LIMIT {
        for k in 1..=family.len() {
            let hit = any_combination(family.len(), k, |idx| {
                let mut u = Bits::new(n);
                for &i in idx {
                    u.union_with(&family[i]);
                }
                mass_of(&u, masses) > target
            });
            if hit {
                return Ok((k, Method::Exhaustive));
            }
        }
        unreachable!("full family exceeds the target");
    }
    let count = lazy_greedy(
        &family,
        n,
        |s, c| s.iter().filter(|&a| !c.contains(a)).map(|a| masses[a]).sum(),
        |c| mass_of(c, masses) > target,
    );
    Ok((count, Method::Greedy))
}

/// Weighted cover over sparse sets (sorted index lists): minimum number of
/// sets whose union has total weight strictly above `target`. Returns the
/// count and whether it is exact; the error carries the reachable weight.
pub fn sparse_mass_cover(
    sets: &[Vec<u32>],
    weights: &[f64],
    target: f64,
) -> std::result::Result<(usize, bool), f64> {
    let n = weights.len();
    let mut seen = std::collections::HashSet::new();
    let family: Vec<&Vec<u32>> = sets.iter().filter(|s| !s.is_empty() && seen.insert(*s)).collect();
    let mut in_union = vec![false; n];
    let mut total = 0usize;
    for s in &family {
        total += s.len();
        for &i in s.iter() {
            in_union[i as usize] = true;
        }
    }
    let union_size = in_union.iter().filter(|&&b| b).count();
    let reachable: f64 = (0..n).filter(|&i| in_union[i]).map(|i| weights[i]).sum();
    if reachable <= target {
        return Err(reachable);
    }
    let set_mass = |s: &Vec<u32>| s.iter().map(|&i| weights[i as usize]).sum::<f64>();
    if total == union_size {
        let mut ms: Vec<f64> = family.iter().map(|s| set_mass(s)).collect();
        ms.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        for (i, m) in ms.iter().enumerate() {
            acc += m;
            if acc > target {
                return Ok((i + 1, true));
            }
        }
        return Err(acc);
    }
    if family.len() <= EXACT_LIMIT {
        // merge points with the same membership pattern
        let mut pattern = vec![0u32; n];
        for (j, s) in family.iter().enumerate() {
            for &i in s.iter() {
                pattern[i as usize] |= 1 << j;
            }
        }
        let mut class_of: HashMap<u32, usize> = HashMap::new();
        let mut class_weight: Vec<f64> = Vec::new();
        let mut class_pattern: Vec<u32> = Vec::new();
        for i in 0..n {
            if pattern[i] == 0 {
                continue;
            }
            let c = *class_of.entry(pattern[i]).or_insert_with(|| {
                class_weight.push(0.0);
                class_pattern.push(pattern[i]);
                class_weight.len() - 1
            });
            class_weight[c] += weights[i];
        }
        let bits: Vec<Bits> = (0..family.len())
            .map(|j| {
                let mut b = Bits::new(class_weight.len());
                for (c, &pat) in class_pattern.iter().enumerate() {
                    if pat & (1 << j) != 0 {
                        b.insert(c);
                    }
                }
                b
            })
            .collect();
        return min_mass_cover(&bits, &class_weight, target).map(|(k, m)| (k, m.is_exact()));
    }

    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    #[derive(PartialEq)]
    struct Key(f64, Reverse<usize>);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
        }
    }
    let mut covered = vec![false; n];
    let gain = |s: &Vec<u32>, covered: &[bool]| -> f64 {
        s.iter().filter(|&&i| !covered[i as usize]).map(|&i| weights[i as usize]).sum()
    };
    let mut heap: BinaryHeap<Key> = family
        .iter()
        .enumerate()
        .map(|(i, s)| Key(set_mass(s), Reverse(i)))
        .collect();
    let mut acc = 0.0;
    let mut count = 0;
    while acc <= target {
        let Some(Key(_, Reverse(i))) = heap.pop() else {
            return Err(acc);
        };
        let g = gain(family[i], &covered);
        let fresh = Key(g, Reverse(i));
        if heap.peek().is_none_or(|top| fresh >= *top) {
            if g <= 0.0 {
                return Err(acc);
            }
            for &a in family[i].iter() {
                if !covered[a as usize] {
                    covered[a as usize] = true;
                    acc += weights[a as usize];
                }
            }
            count += 1;
        } else {
            heap.push(fresh);
        }
    }
    Ok((count, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(len: usize, items: &[usize]) -> Bits {
        let mut b = Bits::new(len);
        for &i in items {
            b.insert(i);
        }
        b
    }

    #[test]
    fn exact_cover_beats_greedy_trap() {
        // classic instance where greedy picks the big middle set first
        let sets = vec![
            set(6, &[0, 1, 2]),
            set(6, &[3, 4, 5]),
            set(6, &[1, 2, 3, 4]),
        ];
        let (k, m) = min_cover(&sets, &Bits::full(6)).unwrap();
        assert_eq!((k, m), (2, Method::Exhaustive));
    }

    #[test]
    fn uncovered_universe() {
        let sets = vec![set(3, &[0]), set(3, &[1])];
        assert!(min_cover(&sets, &Bits::full(3)).is_none());
    }

    #[test]
    fn mass_cover_threshold_is_strict() {
        let sets: Vec<Bits> = (0..4).map(|i| set(4, &[i])).collect();
        let m = vec![0.25; 4];
        assert_eq!(min_mass_cover(&sets, &m, 0.75).unwrap().0, 4);
        assert_eq!(min_mass_cover(&sets, &m, 0.7).unwrap().0, 3);
        assert!(min_mass_cover(&sets[..2], &m, 0.5).is_err());
    }

    #[test]
    fn greedy_used_for_large_families() {
        let sets: Vec<Bits> = (0..30).map(|i| set(30, &[i])).collect();
        let (k, m) = min_cover(&sets, &Bits::full(30)).unwrap();
        assert_eq!((k, m), (30, Method::Partition));
        // overlapping family above the exhaustive limit
        let sets: Vec<Bits> = (0..30).map(|i| set(31, &[i, i + 1])).collect();
        let (k, m) = min_cover(&sets, &Bits::full(31)).unwrap();
        assert_eq!((k, m), (16, Method::Greedy));
    }

    #[test]
    fn maximal_sets_drops_duplicates_and_subsets() {
        let sets = vec![set(4, &[0]), set(4, &[0, 1]), set(4, &[0, 1]), set(4, &[2])];
        let out = maximal_sets(&sets);
        assert_eq!(out, vec![set(4, &[0, 1]), set(4, &[2])]);
    }

    #[test]
    fn sparse_cover_paths() {
        let w = vec![0.25; 4];
        // partition
        let sets = vec![vec![0, 1], vec![2], vec![3]];
        assert_eq!(sparse_mass_cover(&sets, &w, 0.5), Ok((2, true)));
        // small overlapping family: exhaustive
        let sets = vec![vec![0, 1], vec![1, 2], vec![2, 3]];
        assert_eq!(sparse_mass_cover(&sets, &w, 0.75), Ok((2, true)));
        assert_eq!(sparse_mass_cover(&sets[..1], &w, 0.5), Err(0.5));
        // large overlapping family: greedy
        let w = vec![1.0 / 31.0; 31];
        let sets: Vec<Vec<u32>> = (0..30).map(|i| vec![i, i + 1]).collect();
        let (k, exact) = sparse_mass_cover(&sets, &w, 0.99).unwrap();
        assert_eq!((k, exact), (16, false));
    }
}
