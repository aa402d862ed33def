//! Online event denoising: 8-neighbour similarity filter followed by a
//! polarity-separated Surface of Active Events.

use super::{Event, Polarity};

const NEVER: u64 = u64::MAX;

/// Keeps an event when some pixel in its 8-neighbourhood fired less than
/// `window_us` earlier.
#[derive(Debug, Clone)]
pub struct NeighborFilter {
    width: usize,
    height: usize,
    window_us: u64,
    last: Vec<u64>,
}

impl NeighborFilter {
    pub fn new(width: u32, height: u32, window_us: u64) -> Self {
        Self {
            width: width as usize,
            height: height as usize,
            window_us,
            last: vec![NEVER; width as usize * height as usize],
        }
    }

    pub fn process(&mut self, e: &Event) -> bool {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= self.width || y >= self.height {
            return false;
        }
        let t = e.t.0;
        let mut keep = false;
        'scan: for ny in y.saturating_sub(1)..=(y + 1).min(self.height - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(self.width - 1) {
                if nx == x && ny == y {
                    continue;
                }
                let prev = self.last[ny * self.width + nx];
                if prev != NEVER && t.saturating_sub(prev) < self.window_us {
                    keep = true;
                    break 'scan;
                }
            }
        }
        self.last[y * self.width + x] = t;
        keep
    }
}

/// Batch form of [`NeighborFilter`]; preserves order.
pub fn neighbor_filter(stream: &[Event], window_us: u64, width: u32, height: u32) -> Vec<Event> {
    let mut f = NeighborFilter::new(width, height, window_us);
    stream.iter().filter(|e| f.process(e)).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SaeCell {
    t_l: u64,
    t_r: u64,
}

/// Per-polarity surfaces mapping each pixel to `(t_l, t_r)`. `t_l` follows every
/// event; `t_r` only moves, and the event is only kept, when the previous event
/// at that pixel is older than the window or had the other polarity.
#[derive(Debug, Clone)]
pub struct SurfaceOfActiveEvents {
    width: usize,
    height: usize,
    window_us: u64,
    surfaces: [Vec<SaeCell>; 2],
}

impl SurfaceOfActiveEvents {
    pub fn new(width: u32, height: u32, window_us: u64) -> Self {
        let n = width as usize * height as usize;
        let empty = SaeCell {
            t_l: NEVER,
            t_r: NEVER,
        };
        Self {
            width: width as usize,
            height: height as usize,
            window_us,
            surfaces: [vec![empty; n], vec![empty; n]],
        }
    }

    fn idx(&self, x: u16, y: u16) -> Option<usize> {
        let (x, y) = (x as usize, y as usize);
        (x < self.width && y < self.height).then(|| y * self.width + x)
    }

    /// `(t_l, t_r)` at a pixel for one polarity, `None` before the first event.
    pub fn get(&self, x: u16, y: u16, polarity: Polarity) -> Option<(u64, Option<u64>)> {
        let c = self.surfaces[polarity.index()][self.idx(x, y)?];
        (c.t_l != NEVER).then(|| (c.t_l, (c.t_r != NEVER).then_some(c.t_r)))
    }

    pub fn update(&mut self, e: &Event) -> bool {
        let Some(i) = self.idx(e.x, e.y) else {
            return false;
        };
        let t = e.t.0;
        let same = self.surfaces[e.polarity.index()][i].t_l;
        let other = self.surfaces[e.polarity.flipped().index()][i].t_l;
        let keep = match (same, other) {
            (NEVER, _) => true,
            (s, o) if o != NEVER && o >= s => true,
            (s, _) => t.saturating_sub(s) > self.window_us,
        };
        let cell = &mut self.surfaces[e.polarity.index()][i];
        cell.t_l = t;
        if keep {
            cell.t_r = t;
        }
        keep
    }
}

pub fn sae_update(sae: &mut SurfaceOfActiveEvents, e: &Event) -> bool {
    sae.update(e)
}

/// Neighbour filter chained into the SAE; an event survives only if both keep it.
#[derive(Debug, Clone)]
pub struct EventFilter {
    pub neighbor: NeighborFilter,
    pub sae: SurfaceOfActiveEvents,
}

impl EventFilter {
    pub fn new(width: u32, height: u32, neighbor_window_us: u64, sae_window_us: u64) -> Self {
        Self {
            neighbor: NeighborFilter::new(width, height, neighbor_window_us),
            sae: SurfaceOfActiveEvents::new(width, height, sae_window_us),
        }
    }

    pub fn process(&mut self, e: &Event) -> bool {
        self.neighbor.process(e) && self.sae.update(e)
    }
}
