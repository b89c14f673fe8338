use serde::{Deserialize, Serialize};

/// Dense per-(cell, user) table, row-major by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid<T> {
    cells: usize,
    users: usize,
    data: Vec<T>,
}

impl<T: Clone> CellGrid<T> {
    pub fn filled(cells: usize, users: usize, value: T) -> Self {
        CellGrid {
            cells,
            users,
            data: vec![value; cells * users],
        }
    }
}

impl<T> CellGrid<T> {
    pub fn from_fn(cells: usize, users: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(cells * users);
        for c in 0..cells {
            for u in 0..users {
                data.push(f(c, u));
            }
        }
        CellGrid { cells, users, data }
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cells, self.users)
    }

    #[inline]
    pub fn get(&self, cell: usize, user: usize) -> &T {
        &self.data[cell * self.users + user]
    }

    #[inline]
    pub fn get_mut(&mut self, cell: usize, user: usize) -> &mut T {
        &mut self.data[cell * self.users + user]
    }

    pub fn set(&mut self, cell: usize, user: usize, value: T) {
        self.data[cell * self.users + user] = value;
    }

    pub fn cell(&self, cell: usize) -> &[T] {
        &self.data[cell * self.users..(cell + 1) * self.users]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> CellGrid<U> {
        CellGrid {
            cells: self.cells,
            users: self.users,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl CellGrid<f64> {
    pub fn at(&self, cell: usize, user: usize) -> f64 {
        self.data[cell * self.users + user]
    }
}
