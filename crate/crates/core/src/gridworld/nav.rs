use std::collections::VecDeque;

use super::scene::{neighbours, Cell, Scene};

/// 4-connected BFS distances (in cells) from a set of source cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: i32,
    dist: Vec<Option<u32>>,
}

impl DistanceField {
    pub fn from_sources(scene: &Scene, sources: impl IntoIterator<Item = Cell>) -> Self {
        let mut dist = vec![None; scene.cell_count()];
        let mut queue = VecDeque::new();
        for s in sources {
            if scene.is_reachable(s) && dist[scene.index(s)].is_none() {
                dist[scene.index(s)] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(c) = queue.pop_front() {
            let d = dist[scene.index(c)].unwrap();
            for n in neighbours(c) {
                if scene.is_reachable(n) && dist[scene.index(n)].is_none() {
                    dist[scene.index(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        DistanceField { width: scene.width(), dist }
    }

    pub fn get(&self, (ix, iz): Cell) -> Option<u32> {
        if ix < 0 || iz < 0 || ix >= self.width {
            return None;
        }
        self.dist.get((iz * self.width + ix) as usize).copied().flatten()
    }
}

/// Geodesic length in cells between two reachable cells, `None` when no
/// path exists.
pub fn shortest_path(scene: &Scene, from: Cell, to: Cell) -> Option<u32> {
    if !scene.is_reachable(from) || !scene.is_reachable(to) {
        return None;
    }
    DistanceField::from_sources(scene, [to]).get(from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring() -> Scene {
        // 3x3 room at (1..=3, 1..=3) with the center blocked
        let cells: Vec<Cell> = (1..4)
            .flat_map(|z| (1..4).map(move |x| (x, z)))
            .filter(|&c| c != (2, 2))
            .collect();
        Scene::new("ring", 0.25, 5, 5, cells, vec![], vec![]).unwrap()
    }

    #[test]
    fn hand_cases() {
        let s = ring();
        assert_eq!(shortest_path(&s, (1, 1), (1, 1)), Some(0));
        assert_eq!(shortest_path(&s, (1, 1), (1, 2)), Some(1));
        assert_eq!(shortest_path(&s, (1, 1), (3, 3)), Some(4));
        assert_eq!(shortest_path(&s, (1, 1), (2, 2)), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn symmetric_and_triangle(seed in 0u64..10_000) {
            let p = super::super::GenParams { width: 8, depth: 8, ..Default::default() };
            let s = super::super::gen_scene("p", seed, &p).unwrap();
            let cells = s.reachable().to_vec();
            let fields: Vec<_> = cells.iter().map(|&c| DistanceField::from_sources(&s, [c])).collect();
            for (i, a) in cells.iter().enumerate() {
                for (j, b) in cells.iter().enumerate() {
                    let ab = fields[j].get(*a).unwrap();
                    prop_assert_eq!(ab, fields[i].get(*b).unwrap());
                    for (k, c) in cells.iter().enumerate() {
                        let ac = fields[k].get(*a).unwrap();
                        let cb = fields[j].get(*c).unwrap();
                        prop_assert!(ab <= ac + cb);
                    }
                }
            }
        }
    }
}
