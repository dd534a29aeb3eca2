//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's metric or segmentation code paths.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;

/// Random sentence over a small vocabulary so n-gram overlaps are common.
pub fn random_sentence<R: Rng>(rng: &mut R, max_tokens: usize) -> Vec<String> {
    const VOCAB: [&str; 8] = ["an", "cat", "ar", "mata", "ní", "peataí", "sé", "tá"];
    let len = rng.gen_range(1..=max_tokens);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect()
}

fn count_occurrences(tokens: &[String], gram: &[String]) -> usize {
    let mut count = 0;
    for start in 0..tokens.len() {
        if start + gram.len() > tokens.len() {
            break;
        }
        let mut same = true;
        for k in 0..gram.len() {
            if tokens[start + k] != gram[k] {
                same = false;
                break;
            }
        }
        if same {
            count += 1;
        }
    }
    count
}

/// Corpus BLEU by enumerating and clipping every n-gram with nested loops.
pub fn naive_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in pairs {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4 {
            if hyp.len() < n {
                continue;
            }
            let mut seen: Vec<Vec<String>> = Vec::new();
            for start in 0..=hyp.len() - n {
                let gram = hyp[start..start + n].to_vec();
                total[n - 1] += 1;
                if seen.contains(&gram) {
                    continue;
                }
                let in_hyp = count_occurrences(hyp, &gram);
                let in_ref = count_occurrences(reference, &gram);
                matched[n - 1] += in_hyp.min(in_ref);
                seen.push(gram);
            }
        }
    }
    if (0..4).any(|n| matched[n] == 0) || hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// chrF from explicit character n-gram lists; precision and recall averaged
/// over orders with non-empty denominators.
pub fn naive_chrf(pairs: &[(String, String)], max_n: usize, beta: f64) -> f64 {
    let mut matched = vec![0usize; max_n];
    let mut hyp_total = vec![0usize; max_n];
    let mut ref_total = vec![0usize; max_n];
    for (hyp, reference) in pairs {
        let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=max_n {
            let hg: Vec<&[char]> = if h.len() >= n { (0..=h.len() - n).map(|i| &h[i..i + n]).collect() } else { vec![] };
            let rg: Vec<&[char]> = if r.len() >= n { (0..=r.len() - n).map(|i| &r[i..i + n]).collect() } else { vec![] };
            hyp_total[n - 1] += hg.len();
            ref_total[n - 1] += rg.len();
            let mut used = vec![false; rg.len()];
            for g in &hg {
                if let Some(k) = (0..rg.len()).find(|&k| !used[k] && rg[k] == *g) {
                    used[k] = true;
                    matched[n - 1] += 1;
                }
            }
        }
    }
    let avg = |den: &[usize]| {
        let vals: Vec<f64> = (0..max_n).filter(|&n| den[n] > 0).map(|n| matched[n] as f64 / den[n] as f64).collect();
        if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 }
    };
    let p = avg(&hyp_total);
    let r = avg(&ref_total);
    let b2 = beta * beta;
    if p + r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) }
}

/// Recursive memoized Levenshtein distance over tokens.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j + 1, memo).min(go(a, b, i + 1, j, memo)).min(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Minimum over every reachable shift sequence of (#shifts + edit distance),
/// exploring all block moves whose words occur contiguously in the reference.
pub fn exhaustive_ter_edits(hyp: &[String], reference: &[String]) -> usize {
    let occurs = |block: &[String]| reference.windows(block.len()).any(|w| w == block);
    let mut dist: HashMap<Vec<String>, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    dist.insert(hyp.to_vec(), 0);
    queue.push_back(hyp.to_vec());
    let mut best = usize::MAX;
    while let Some(state) = queue.pop_front() {
        let d = dist[&state];
        best = best.min(d + levenshtein(&state, reference));
        if d >= best {
            continue;
        }
        let n = state.len();
        for start in 0..n {
            for len in 1..=(n - start).min(10) {
                let block = &state[start..start + len];
                if !occurs(block) {
                    continue;
                }
                let mut rest: Vec<String> = state[..start].to_vec();
                rest.extend_from_slice(&state[start + len..]);
                for dest in 0..=rest.len() {
                    let mut next = rest[..dest].to_vec();
                    next.extend_from_slice(block);
                    next.extend_from_slice(&rest[dest..]);
                    if !dist.contains_key(&next) {
                        dist.insert(next.clone(), d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    best
}

/// Every segmentation of `text` into vocabulary pieces, with its log-prob.
pub fn all_segmentations(text: &str, vocab: &HashMap<String, f64>) -> Vec<(f64, Vec<String>)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, f64, Vec<String>)> = vec![(0, 0.0, vec![])];
    while let Some((pos, lp, seg)) = stack.pop() {
        if pos == chars.len() {
            out.push((lp, seg));
            continue;
        }
        for end in pos + 1..=chars.len() {
            let piece: String = chars[pos..end].iter().collect();
            if let Some(p) = vocab.get(&piece) {
                let mut next = seg.clone();
                next.push(piece);
                stack.push((end, lp + p, next));
            }
        }
    }
    out
}

/// Argmax segmentation; exact ties go to the lexicographically smallest
/// piece sequence. Scores are summed left to right.
pub fn brute_force_segment(text: &str, vocab: &HashMap<String, f64>) -> Option<Vec<String>> {
    let mut all = all_segmentations(text, vocab);
    for (lp, seg) in all.iter_mut() {
        *lp = seg.iter().fold(0.0, |acc, p| acc + vocab[p]);
    }
    all.into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(&a.1)))
        .map(|(_, s)| s)
}

pub fn distinct(items: &[String]) -> usize {
    items.iter().collect::<HashSet<_>>().len()
}
