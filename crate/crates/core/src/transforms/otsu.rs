use std::cmp::Ordering;

/// Compares `a / b` with `c / d` exactly (all denominators non-zero).
fn cmp_fraction(mut a: u128, mut b: u128, mut c: u128, mut d: u128) -> Ordering {
    let mut flipped = false;
    loop {
        let (q1, r1) = (a / b, a % b);
        let (q2, r2) = (c / d, c % d);
        let ord = match q1.cmp(&q2) {
            Ordering::Equal => match (r1 == 0, r2 == 0) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => {
                    // r1/b vs r2/d is the reverse of b/r1 vs d/r2
                    (a, b, c, d) = (b, r1, d, r2);
                    flipped = !flipped;
                    continue;
                }
            },
            o => o,
        };
        return if flipped { ord.reverse() } else { ord };
    }
}

/// Otsu threshold over the 256-bin histogram of `gray`.
///
/// Pixels `<= θ` form the background class, so the result pairs with a strict `>`
/// binarization. The between-class variance is compared exactly in integer
/// arithmetic, as `(N·S0 − n0·S)² / (n0·n1)`, and ties go to the smallest θ. An image
/// with a single occupied bin returns that bin.
pub fn otsu_threshold(gray: &[u8]) -> u8 {
    assert!(!gray.is_empty(), "otsu_threshold needs at least one pixel");
    debug_assert!(
        gray.len() < 1 << 26,
        "exact comparison sized for < 2^26 pixels"
    );
    let mut hist = [0u64; 256];
    for &v in gray {
        hist[v as usize] += 1;
    }
    let n = gray.len() as i128;
    let total: i128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as i128 * c as i128)
        .sum();

    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0i128, 0i128);
    for (t, &count) in hist.iter().enumerate().take(255) {
        n0 += count as i128;
        s0 += t as i128 * count as i128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n * s0 - n0 * total).unsigned_abs();
        let num = diff * diff;
        let den = (n0 * n1) as u128;
        match best {
            Some((_, bn, bd)) if cmp_fraction(num, den, bn, bd) != Ordering::Greater => {}
            _ => best = Some((t as u8, num, den)),
        }
    }
    match best {
        Some((t, _, _)) => t,
        // Single occupied bin.
        None => gray[0],
    }
}
