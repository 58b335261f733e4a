use super::Volume;
use crate::error::{Error, Result};

/// Slices `(z-1, z, z+1)` of a volume as three input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub data: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub center_z: usize,
}

impl SliceStack {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Neighbors past either end replicate the edge slice.
pub fn make_25d_stack(v: &Volume, z: usize) -> Result<SliceStack> {
    let depth = v.depth();
    if z >= depth {
        return Err(Error::invalid(format!("slice {z} outside depth {depth}")));
    }
    let [_, rows, cols] = v.shape();
    let mut data = Vec::with_capacity(3 * rows * cols);
    for zz in [z.saturating_sub(1), z, (z + 1).min(depth - 1)] {
        data.extend_from_slice(v.slice(zz));
    }
    Ok(SliceStack {
        data,
        rows,
        cols,
        center_z: z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(depth: usize) -> Volume {
        let data = (0..depth * 4).map(|i| (i / 4) as f32).collect();
        Volume::new("v", [depth, 2, 2], [1.0; 3], data).unwrap()
    }

    fn tags(s: &SliceStack) -> [f32; 3] {
        [s.channel(0)[0], s.channel(1)[0], s.channel(2)[0]]
    }

    #[test]
    fn first_slice_replicates_itself() {
        assert_eq!(tags(&make_25d_stack(&vol(5), 0).unwrap()), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn interior_and_last() {
        let v = vol(5);
        assert_eq!(tags(&make_25d_stack(&v, 2).unwrap()), [1.0, 2.0, 3.0]);
        assert_eq!(tags(&make_25d_stack(&v, 4).unwrap()), [3.0, 4.0, 4.0]);
        assert_eq!(make_25d_stack(&v, 2).unwrap().channel(1), v.slice(2));
    }

    #[test]
    fn single_slice_volume() {
        assert_eq!(tags(&make_25d_stack(&vol(1), 0).unwrap()), [0.0; 3]);
    }

    #[test]
    fn out_of_range() {
        assert!(make_25d_stack(&vol(3), 3).is_err());
    }
}
