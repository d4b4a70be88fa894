/// Per-cycle reservation counts for a pool of identical resources.
#[derive(Debug, Clone)]
pub struct PortTable {
    capacity: u32,
    used: Vec<u32>,
}

impl PortTable {
    pub fn new(capacity: u32) -> Self {
        Self {
            capacity,
            used: Vec::new(),
        }
    }

    pub fn used_at(&self, cycle: u64) -> u32 {
        self.used.get(cycle as usize).copied().unwrap_or(0)
    }

    fn fits(&self, start: u64, len: u64, count: u32) -> bool {
        (start..start + len).all(|c| self.used_at(c) + count <= self.capacity)
    }

    /// Earliest cycle at or after `from` where `count` ports are free for
    /// `len` consecutive cycles, or `None` if nothing fits by `limit`.
    pub fn find(&self, from: u64, len: u64, count: u32, limit: u64) -> Option<u64> {
        let mut c = from;
        while c <= limit {
            if self.fits(c, len, count) {
                return Some(c);
            }
            c += 1;
        }
        None
    }

    pub fn reserve(&mut self, start: u64, len: u64, count: u32) {
        let end = (start + len) as usize;
        if self.used.len() < end {
            self.used.resize(end, 0);
        }
        for c in start as usize..end {
            self.used[c] += count;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_first_window() {
        let mut p = PortTable::new(3);
        p.reserve(0, 4, 2);
        p.reserve(2, 4, 1);
        assert_eq!(p.find(0, 4, 1, 100), Some(4));
        assert_eq!(p.find(0, 4, 3, 100), Some(6));
        assert_eq!(p.find(0, 2, 1, 100), Some(0));
        assert_eq!(p.find(0, 4, 4, 100), None);
    }
}
