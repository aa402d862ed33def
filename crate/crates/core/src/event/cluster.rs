use serde::{Deserialize, Serialize};

use super::{BBox, Event};

/// Grid-activation clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cell_width: u32,
    pub cell_height: u32,
    /// Accumulation interval c_Δt.
    pub interval_us: u64,
    /// A cell is active once it holds at least this many events.
    pub threshold: u32,
    /// Neighbour-filter window T_n.
    pub neighbor_window_us: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cell_width: 8,
            cell_height: 8,
            interval_us: 5000,
            threshold: 5,
            neighbor_window_us: 2000,
        }
    }
}

/// A connected group of active cells and the tight box of their events.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub min_x: u16,
    pub min_y: u16,
    pub max_x: u16,
    pub max_y: u16,
    pub event_count: usize,
    pub cell_count: usize,
}

impl Cluster {
    /// Box spanning the member pixels, pixel centers at integer coordinates.
    pub fn bbox(&self) -> BBox {
        BBox::new(
            (self.min_x as f64 + self.max_x as f64) / 2.0,
            (self.min_y as f64 + self.max_y as f64) / 2.0,
            (self.max_x - self.min_x) as f64 + 1.0,
            (self.max_y - self.min_y) as f64 + 1.0,
        )
    }
}

/// Bins `events` into cells, marks cells with at least `threshold` events active,
/// joins active cells by 4-connectivity and returns one cluster per component,
/// ordered by (top, left).
pub fn grid_cluster(events: &[Event], cfg: &GridConfig, width: u32, height: u32) -> Vec<Cluster> {
    let cols = width.div_ceil(cfg.cell_width) as usize;
    let rows = height.div_ceil(cfg.cell_height) as usize;
    let cell_of = |e: &Event| -> Option<usize> {
        if e.x as u32 >= width || e.y as u32 >= height {
            return None;
        }
        let c = e.x as usize / cfg.cell_width as usize;
        let r = e.y as usize / cfg.cell_height as usize;
        Some(r * cols + c)
    };

    let mut counts = vec![0u32; rows * cols];
    for e in events {
        if let Some(i) = cell_of(e) {
            counts[i] += 1;
        }
    }

    let mut label = vec![usize::MAX; rows * cols];
    let mut n_components = 0;
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if counts[start] < cfg.threshold || label[start] != usize::MAX {
            continue;
        }
        label[start] = n_components;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if counts[j] >= cfg.threshold && label[j] == usize::MAX {
                    label[j] = n_components;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        n_components += 1;
    }

    let mut clusters: Vec<Cluster> = (0..n_components)
        .map(|_| Cluster {
            min_x: u16::MAX,
            min_y: u16::MAX,
            max_x: 0,
            max_y: 0,
            event_count: 0,
            cell_count: 0,
        })
        .collect();
    for &l in &label {
        if l != usize::MAX {
            clusters[l].cell_count += 1;
        }
    }
    for e in events {
        let Some(i) = cell_of(e) else { continue };
        let l = label[i];
        if l == usize::MAX {
            continue;
        }
        let c = &mut clusters[l];
        c.min_x = c.min_x.min(e.x);
        c.min_y = c.min_y.min(e.y);
        c.max_x = c.max_x.max(e.x);
        c.max_y = c.max_y.max(e.y);
        c.event_count += 1;
    }
    clusters.sort_by_key(|c| (c.min_y, c.min_x));
    clusters
}
