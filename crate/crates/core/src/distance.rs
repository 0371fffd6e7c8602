use serde::{Deserialize, Serialize};

use crate::types::{EgoState, ObjectState, MAX_OBJECTS};

/// Object slots plus the ego.
pub const MATRIX_SLOTS: usize = MAX_OBJECTS + 1;
/// The ego occupies the last row/column.
pub const EGO_SLOT: usize = MAX_OBJECTS;

/// Pairwise Euclidean distances between all slot centers (ego at origin)
/// with a presence mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub d: [[f64; MATRIX_SLOTS]; MATRIX_SLOTS],
    pub mask: [[bool; MATRIX_SLOTS]; MATRIX_SLOTS],
}

impl DistanceMatrix {
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

pub fn build_distance_matrix(_ego: &EgoState, objects: &[ObjectState; MAX_OBJECTS]) -> DistanceMatrix {
    let mut centers = [(0.0, 0.0); MATRIX_SLOTS];
    let mut present = [false; MATRIX_SLOTS];
    for (k, o) in objects.iter().enumerate() {
        if o.present {
            centers[k] = (o.x, o.y);
            present[k] = true;
        }
    }
    present[EGO_SLOT] = true;

    let mut d = [[0.0; MATRIX_SLOTS]; MATRIX_SLOTS];
    let mut mask = [[false; MATRIX_SLOTS]; MATRIX_SLOTS];
    for i in 0..MATRIX_SLOTS {
        for j in i..MATRIX_SLOTS {
            if present[i] && present[j] {
                let dist = if i == j {
                    0.0
                } else {
                    (centers[i].0 - centers[j].0).hypot(centers[i].1 - centers[j].1)
                };
                d[i][j] = dist;
                d[j][i] = dist;
                mask[i][j] = true;
                mask[j][i] = true;
            }
        }
    }
    DistanceMatrix { d, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(x: f64, y: f64) -> ObjectState {
        ObjectState { v: 10.0, x, y, lane_id: 0, length: 4.5, present: true }
    }

    #[test]
    fn three_four_five() {
        let mut objects = [ObjectState::ABSENT; MAX_OBJECTS];
        objects[0] = obj(3.0, 4.0);
        let m = build_distance_matrix(&EgoState::default(), &objects);
        assert_eq!(m.d[EGO_SLOT][0], 5.0);
        assert_eq!(m.d[0][EGO_SLOT], 5.0);
        assert!(m.mask[EGO_SLOT][0] && m.mask[0][EGO_SLOT]);
        assert!(!m.mask[1][EGO_SLOT]);
    }

    #[test]
    fn empty_scene() {
        let m = build_distance_matrix(&EgoState::default(), &[ObjectState::ABSENT; MAX_OBJECTS]);
        for i in 0..MATRIX_SLOTS {
            for j in 0..MATRIX_SLOTS {
                assert_eq!(m.d[i][j], 0.0);
                assert_eq!(m.mask[i][j], i == EGO_SLOT && j == EGO_SLOT);
            }
        }
        assert_eq!(m.unmasked_count(), 1);
    }

    #[test]
    fn grid_matches_pairwise_loop() {
        let mut objects = [ObjectState::ABSENT; MAX_OBJECTS];
        let placed = [(2usize, (10.0, 0.0)), (5, (10.0, 3.5)), (11, (-20.0, -3.5))];
        for &(slot, (x, y)) in &placed {
            objects[slot] = obj(x, y);
        }
        let m = build_distance_matrix(&EgoState::default(), &objects);

        // brute force over the explicit list, ego included
        let mut list: Vec<(usize, (f64, f64))> = placed.to_vec();
        list.push((EGO_SLOT, (0.0, 0.0)));
        for &(a, pa) in &list {
            for &(b, pb) in &list {
                let expect = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
                assert!((m.d[a][b] - expect).abs() < 1e-12);
                assert!(m.mask[a][b]);
            }
        }
        assert_eq!(m.unmasked_count(), 16);
    }

    proptest! {
        #[test]
        fn symmetric_zero_diagonal(
            slots in proptest::collection::vec(
                (any::<bool>(), -100f64..100.0, -100f64..100.0), MAX_OBJECTS)
        ) {
            let mut objects = [ObjectState::ABSENT; MAX_OBJECTS];
            for (k, &(p, x, y)) in slots.iter().enumerate() {
                if p { objects[k] = obj(x, y); }
            }
            let m = build_distance_matrix(&EgoState::default(), &objects);
            for i in 0..MATRIX_SLOTS {
                prop_assert_eq!(m.d[i][i], 0.0);
                for j in 0..MATRIX_SLOTS {
                    prop_assert_eq!(m.d[i][j], m.d[j][i]);
                    prop_assert!(m.d[i][j] >= 0.0);
                    prop_assert_eq!(m.mask[i][j], m.mask[j][i]);
                }
            }
        }
    }
}
