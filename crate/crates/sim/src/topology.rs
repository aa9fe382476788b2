//! Carrier-sense topology: which stations hear which, and who transmits to
//! whom. The sense relation is symmetric and reflexive; every transmitter has
//! exactly one receiver.

use crate::engine::StationId;

#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    sense: Vec<Vec<bool>>,
    /// `links[i] = Some(r)` when station `i` transmits to station `r`.
    links: Vec<Option<StationId>>,
}

impl Topology {
    pub fn new(sense: Vec<Vec<bool>>, links: Vec<Option<StationId>>) -> Result<Topology, String> {
        let n = sense.len();
        if links.len() != n {
            return Err(format!(
                "links has {} entries for {} stations",
                links.len(),
                n
            ));
        }
        for (i, row) in sense.iter().enumerate() {
            if row.len() != n {
                return Err(format!("sense row {i} has {} entries, want {n}", row.len()));
            }
            if !row[i] {
                return Err(format!("sense({i},{i}) must be true"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if sense[i][j] != sense[j][i] {
                    return Err(format!("sense not symmetric at ({i},{j})"));
                }
            }
        }
        for (i, link) in links.iter().enumerate() {
            if let Some(r) = link {
                if r.idx() >= n {
                    return Err(format!("links[{i}] out of range: {}", r.idx()));
                }
                if r.idx() == i {
                    return Err(format!("links[{i}] points at itself"));
                }
                if !sense[i][r.idx()] {
                    return Err(format!("transmitter {i} cannot sense its receiver {}", r.idx()));
                }
            }
        }
        Ok(Topology { n, sense, links })
    }

    /// `n` transmitter/receiver pairs, everyone in one carrier-sense domain.
    /// Transmitters are stations `0..n`, receiver of `i` is `n + i`.
    pub fn fully_connected(pairs: usize) -> Topology {
        let n = 2 * pairs;
        let sense = vec![vec![true; n]; n];
        let mut links = vec![None; n];
        for i in 0..pairs {
            links[i] = Some(StationId(pairs + i));
        }
        Topology::new(sense, links).expect("fully connected topology is valid")
    }

    /// Three transmitter/receiver pairs in rooms arranged in a row.
    ///
    /// Transmitters 0,1,2 sit in rooms 0,1,2 and transmit to receivers 3,4,5
    /// in the same rooms. A transmitter hears the adjacent room but not the
    /// far one, so the two end transmitters are mutually hidden while the
    /// middle one is exposed to both. Receivers sit near the room boundaries
    /// and hear everything except the opposite end receiver, which puts the
    /// end receivers inside the far transmitter's interference range: the
    /// classic hidden-terminal collision geometry.
    pub fn three_rooms() -> Topology {
        let n = 6;
        let mut sense = vec![vec![true; n]; n];
        let mut off = |a: usize, b: usize| {
            sense[a][b] = false;
            sense[b][a] = false;
        };
        off(0, 2); // end transmitters are hidden from each other
        off(3, 5); // end receivers out of mutual range
        let links = vec![
            Some(StationId(3)),
            Some(StationId(4)),
            Some(StationId(5)),
            None,
            None,
            None,
        ];
        Topology::new(sense, links).expect("three-room topology is valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn senses(&self, a: StationId, b: StationId) -> bool {
        self.sense[a.idx()][b.idx()]
    }

    #[inline]
    pub fn link(&self, tx: StationId) -> Option<StationId> {
        self.links[tx.idx()]
    }

    pub fn transmitters(&self) -> impl Iterator<Item = StationId> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| StationId(i)))
    }
}
