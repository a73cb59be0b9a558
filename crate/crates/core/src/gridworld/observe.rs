use super::metadata::{cell_visible, VisibilityConfig};
use super::motion::AgentPose;
use super::scene::{Cell, Scene};

/// Egocentric occupancy and target-mask patches, `2 * k * k` values.
///
/// Row 0 of each `k x k` patch is the row farthest ahead of the agent and
/// the center entry is the agent's own cell. Occupancy comes first.
pub fn render_observation(
    scene: &Scene,
    pose: &AgentPose,
    target_class: Option<usize>,
    k: usize,
    vis: &VisibilityConfig,
) -> Vec<f64> {
    assert!(k % 2 == 1, "patch size must be odd");
    let c = (k / 2) as i32;
    let rad = (pose.rotation as f64).to_radians();
    let (fx, fz) = (rad.sin().round() as i32, rad.cos().round() as i32);
    let (rx, rz) = (fz, -fx);
    let origin = pose.cell(scene);
    let mut out = vec![0.0; 2 * k * k];
    let targets: Vec<Cell> = match target_class {
        Some(class) => scene
            .objects()
            .iter()
            .filter(|o| o.class_id == class)
            .map(|o| o.cell)
            .collect(),
        None => Vec::new(),
    };
    for row in 0..k {
        for col in 0..k {
            let fwd = c - row as i32;
            let side = col as i32 - c;
            let cell = (origin.0 + fwd * fx + side * rx, origin.1 + fwd * fz + side * rz);
            let i = row * k + col;
            if scene.is_reachable(cell) {
                out[i] = 1.0;
            }
            if targets.contains(&cell) && cell_visible(scene, pose, cell, vis) {
                out[k * k + i] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::ObjectInstance;

    fn scene_with_target(target: Cell) -> Scene {
        let cells: Vec<Cell> = (1..10).flat_map(|z| (1..10).map(move |x| (x, z))).collect();
        Scene::new("o", 0.25, 11, 11, cells, vec![ObjectInstance { class_id: 2, cell: target }], vec![]).unwrap()
    }

    #[test]
    fn open_room_center() {
        let s = scene_with_target((1, 1));
        let p = AgentPose::at_cell(&s, (5, 5), 0);
        let obs = render_observation(&s, &p, Some(0), 7, &VisibilityConfig::default());
        assert_eq!(obs.len(), 98);
        assert!(obs[..49].iter().all(|&v| v == 1.0));
        assert!(obs[49..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_ahead_lands_in_forward_column() {
        let s = scene_with_target((5, 7));
        let p = AgentPose::at_cell(&s, (5, 5), 0);
        let obs = render_observation(&s, &p, Some(2), 7, &VisibilityConfig::default());
        let hits: Vec<usize> = (0..49).filter(|&i| obs[49 + i] != 0.0).collect();
        // two cells ahead: row 3 - 2 = 1, forward column 3
        assert_eq!(hits, vec![7 + 3]);
    }

    #[test]
    fn rotation_equivariance() {
        // asymmetric room: wall notch near the agent
        let cells: Vec<Cell> = (1..10)
            .flat_map(|z| (1..10).map(move |x| (x, z)))
            .filter(|&c| c != (6, 7) && c != (7, 7) && c != (6, 6) && c != (7, 6))
            .collect();
        let s = Scene::new("n", 0.25, 11, 11, cells, vec![], vec![]).unwrap();
        let vis = VisibilityConfig::default();
        let k = 7;
        let base = render_observation(&s, &AgentPose::at_cell(&s, (5, 5), 0), None, k, &vis);
        let turned = render_observation(&s, &AgentPose::at_cell(&s, (5, 5), 90), None, k, &vis);
        // facing +x, the world cell at (row, col) of the unrotated patch shows
        // up at (k-1-col, row)
        for row in 0..k {
            for col in 0..k {
                assert_eq!(base[row * k + col], turned[(k - 1 - col) * k + row], "({row},{col})");
            }
        }
        assert_ne!(base, turned);
    }
}
