//! Dense user × subcarrier storage.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Row-major `K × N_F` matrix indexed by `(user, subcarrier)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGrid<T> {
    users: usize,
    carriers: usize,
    data: Vec<T>,
}

impl<T: Clone> UserGrid<T> {
    pub fn filled(users: usize, carriers: usize, value: T) -> Self {
        Self {
            users,
            carriers,
            data: vec![value; users * carriers],
        }
    }
}

impl<T> UserGrid<T> {
    pub fn from_fn(users: usize, carriers: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(users * carriers);
        for k in 0..users {
            for i in 0..carriers {
                data.push(f(k, i));
            }
        }
        Self {
            users,
            carriers,
            data,
        }
    }

    /// Builds a grid from per-user rows. Returns `None` for ragged input.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Option<Self> {
        let users = rows.len();
        let carriers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != carriers) {
            return None;
        }
        Some(Self {
            users,
            carriers,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn carriers(&self) -> usize {
        self.carriers
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.users, self.carriers)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    /// Entries of subcarrier `i` across all users.
    pub fn column(&self, i: usize) -> impl Iterator<Item = &T> + '_ {
        (0..self.users).map(move |k| &self.data[k * self.carriers + i])
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.carriers..(k + 1) * self.carriers]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> UserGrid<U> {
        UserGrid {
            users: self.users,
            carriers: self.carriers,
            data: self.data.iter().map(&mut f).collect(),
        }
    }
}

impl UserGrid<f64> {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl<T> Index<(usize, usize)> for UserGrid<T> {
    type Output = T;

    fn index(&self, (k, i): (usize, usize)) -> &T {
        debug_assert!(k < self.users && i < self.carriers);
        &self.data[k * self.carriers + i]
    }
}

impl<T> IndexMut<(usize, usize)> for UserGrid<T> {
    fn index_mut(&mut self, (k, i): (usize, usize)) -> &mut T {
        debug_assert!(k < self.users && i < self.carriers);
        &mut self.data[k * self.carriers + i]
    }
}
