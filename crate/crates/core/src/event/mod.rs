//! Event-camera processing: noise filtering, grid clustering and box tracking.

mod cluster;
mod filter;
mod tracker;

pub use cluster::{grid_cluster, Cluster, GridConfig};
pub use filter::{neighbor_filter, sae_update, EventFilter, NeighborFilter, SurfaceOfActiveEvents};
pub use tracker::{tracker_step, Track, Tracker, TrackerConfig};

use std::io::{self, Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: Timestamp,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, polarity: Polarity) -> Self {
        Self {
            x,
            y,
            t: Timestamp(t),
            polarity,
        }
    }
}

/// Size of one packed binary record: u16 x, u16 y, u64 t_us, i8 polarity (little endian).
pub const EVENT_RECORD_BYTES: usize = 13;

pub fn write_events_bin<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    let mut buf = [0u8; EVENT_RECORD_BYTES];
    for e in events {
        buf[0..2].copy_from_slice(&e.x.to_le_bytes());
        buf[2..4].copy_from_slice(&e.y.to_le_bytes());
        buf[4..12].copy_from_slice(&e.t.0.to_le_bytes());
        buf[12] = e.polarity.as_i8() as u8;
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn read_events_bin<R: Read>(mut r: R) -> io::Result<Vec<Event>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % EVENT_RECORD_BYTES != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "event stream length is not a whole number of records",
        ));
    }
    bytes
        .chunks_exact(EVENT_RECORD_BYTES)
        .map(|c| {
            let polarity = Polarity::from_i8(c[12] as i8).ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, "polarity must be ±1")
            })?;
            Ok(Event {
                x: u16::from_le_bytes([c[0], c[1]]),
                y: u16::from_le_bytes([c[2], c[3]]),
                t: Timestamp(u64::from_le_bytes(c[4..12].try_into().unwrap())),
                polarity,
            })
        })
        .collect()
}

/// Debug CSV: `x,y,t_us,polarity`.
pub fn write_events_csv<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    writeln!(w, "x,y,t_us,polarity")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.t.0, e.polarity.as_i8())?;
    }
    w.flush()
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Whether the pixel `(x, y)` (integer coordinates at pixel centers) lies inside.
    pub fn contains_pixel(&self, x: u16, y: u16) -> bool {
        let (x, y) = (x as f64, y as f64);
        x >= self.left() && x < self.right() && y >= self.top() && y < self.bottom()
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.left() && p.x <= self.right() && p.y >= self.top() && p.y <= self.bottom()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_record_layout_is_fixed() {
        let e = Event::new(0x0102, 0x0304, 0x0506_0708_090a_0b0c, Polarity::Negative);
        let mut buf = Vec::new();
        write_events_bin(&mut buf, &[e]).unwrap();
        assert_eq!(
            buf,
            vec![0x02, 0x01, 0x04, 0x03, 0x0c, 0x0b, 0x0a, 0x09, 0x08, 0x07, 0x06, 0x05, 0xff]
        );
        assert_eq!(read_events_bin(&buf[..]).unwrap(), vec![e]);
        assert!(read_events_bin(&buf[..12]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &[Event::new(3, 4, 99, Polarity::Positive)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,t_us,polarity\n3,4,99,1\n");
    }

    #[test]
    fn iou_basic_cases() {
        let a = BBox::new(10.0, 10.0, 4.0, 4.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(100.0, 10.0, 4.0, 4.0)), 0.0);
        let half = BBox::new(12.0, 10.0, 4.0, 4.0);
        assert!((a.iou(&half) - 8.0 / 24.0).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..100.0, 0.0f64..100.0, 0.5f64..40.0, 0.5f64..40.0)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = a.iou(&b);
            prop_assert!((ab - b.iou(&a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            if ab >= 1.0 - 1e-12 {
                prop_assert!((a.cx - b.cx).abs() < 1e-6 && (a.w - b.w).abs() < 1e-6);
            }
        }

        #[test]
        fn binary_round_trip(raw in prop::collection::vec((any::<u16>(), any::<u16>(), any::<u64>(), any::<bool>()), 0..50)) {
            let events: Vec<Event> = raw.into_iter()
                .map(|(x, y, t, p)| Event::new(x, y, t, if p { Polarity::Positive } else { Polarity::Negative }))
                .collect();
            let mut buf = Vec::new();
            write_events_bin(&mut buf, &events).unwrap();
            prop_assert_eq!(buf.len(), events.len() * EVENT_RECORD_BYTES);
            prop_assert_eq!(read_events_bin(&buf[..]).unwrap(), events);
        }
    }
}
