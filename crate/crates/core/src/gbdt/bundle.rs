//! Exclusive feature bundling: merge binned columns that are (nearly) never
//! simultaneously non-default into one physical column, shrinking histogram
//! work from O(data × features) toward O(data × bundles).

/// One bundle of logical columns sharing a physical column.
///
/// Bin 0 of the physical column means "every member at its default"; member
/// `i`'s non-default bins `1..n_bins_i` are relocated to start at
/// `offsets[i]`, so member values stay disjoint and recoverable.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub members: Vec<usize>,
    /// Physical bin where each member's bin 1 lands.
    pub offsets: Vec<u16>,
    pub n_bins: usize,
    /// Rows where two or more members were simultaneously non-default.
    pub conflicts: usize,
}

impl FeatureBundle {
    /// Member's logical bin for a physical bundle value (0 when the value
    /// belongs to another member).
    pub fn member_bin(&self, member: usize, physical: u16) -> u16 {
        let lo = self.offsets[member];
        let hi = match self.offsets.get(member + 1) {
            Some(next) => *next,
            None => self.n_bins as u16,
        };
        if physical >= lo && physical < hi {
            physical - lo + 1
        } else {
            0
        }
    }
}

/// Sample-occupancy bitmaps make the pairwise conflict counts cheap.
struct Bitmap {
    words: Vec<u64>,
}

impl Bitmap {
    fn new(n: usize) -> Self {
        Bitmap { words: vec![0; n.div_ceil(64)] }
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Overlap with `other`, giving up early once `limit` is exceeded.
    fn overlap_exceeds(&self, other: &Bitmap, limit: usize) -> (usize, bool) {
        let mut total = 0usize;
        for (a, b) in self.words.iter().zip(&other.words) {
            total += (a & b).count_ones() as usize;
            if total > limit {
                return (total, true);
            }
        }
        (total, false)
    }

    fn or_assign(&mut self, other: &Bitmap) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

/// Greedily assign binned columns to bundles.
///
/// Columns are visited by descending non-default count (ties by ascending
/// column index) and join the first bundle that stays within the conflict
/// budget — a fraction of rows allowed to have two or more non-default
/// members. Budget 0 only ever merges strictly mutually exclusive columns.
/// Physical bin counts are capped so bundle values fit a u16.
pub fn efb_bundle(
    columns: &[Vec<u16>],
    n_bins: &[usize],
    n_rows: usize,
    conflict_budget: f64,
) -> Vec<FeatureBundle> {
    let max_conflicts = (conflict_budget * n_rows as f64).floor() as usize;
    let mut order: Vec<usize> = (0..columns.len()).collect();
    let nonzero: Vec<usize> =
        columns.iter().map(|col| col.iter().filter(|&&b| b != 0).count()).collect();
    order.sort_by(|&x, &y| nonzero[y].cmp(&nonzero[x]).then(x.cmp(&y)));

    let mut occupancy: Vec<Bitmap> = Vec::new();
    let mut bundles: Vec<FeatureBundle> = Vec::new();
    for col in order {
        let mut bits = Bitmap::new(n_rows);
        for (i, &b) in columns[col].iter().enumerate() {
            if b != 0 {
                bits.set(i);
            }
        }
        let extra_bins = n_bins[col] - 1;
        let mut placed = false;
        for (bundle, occ) in bundles.iter_mut().zip(&mut occupancy) {
            if bundle.n_bins + extra_bins > u16::MAX as usize {
                continue;
            }
            let headroom = max_conflicts - bundle.conflicts;
            let (overlap, exceeded) = bits.overlap_exceeds(occ, headroom);
            if exceeded {
                continue;
            }
            bundle.conflicts += overlap;
            bundle.offsets.push(bundle.n_bins as u16);
            bundle.n_bins += extra_bins;
            bundle.members.push(col);
            occ.or_assign(&bits);
            placed = true;
            break;
        }
        if !placed {
            bundles.push(FeatureBundle {
                members: vec![col],
                offsets: vec![1],
                n_bins: 1 + extra_bins,
                conflicts: 0,
            });
            occupancy.push(bits);
        }
    }
    bundles
}

/// Materialize one bundle's physical column. On a conflicting row the
/// member listed first in the bundle wins; the others read back as default.
pub fn bundle_column(bundle: &FeatureBundle, columns: &[Vec<u16>], n_rows: usize) -> Vec<u16> {
    let mut out = vec![0u16; n_rows];
    for (m, &col) in bundle.members.iter().enumerate() {
        let offset = bundle.offsets[m];
        for (i, &b) in columns[col].iter().enumerate() {
            if b != 0 && out[i] == 0 {
                out[i] = offset + b - 1;
            }
        }
    }
    out
}
