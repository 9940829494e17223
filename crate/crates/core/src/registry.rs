//! Name-keyed registries of interchangeable strategies selected at run time.

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `item` under `name`, replacing an earlier entry with that name.
    pub fn register(&mut self, name: &'static str, item: Box<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = item,
            None => self.entries.push((name, item)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, item)| item.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        self.entries.iter().map(|(n, item)| (*n, item.as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Fixed(&'static str);

    impl Greeter for Fixed {
        fn greet(&self) -> String {
            self.0.to_string()
        }
    }

    #[test]
    fn lookup_and_replacement() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("a", Box::new(Fixed("one")));
        reg.register("b", Box::new(Fixed("two")));
        reg.register("a", Box::new(Fixed("three")));
        assert_eq!(reg.names(), vec!["a", "b"]);
        assert_eq!(reg.get("a").unwrap().greet(), "three");
        let err = reg.get("c").err().unwrap().to_string();
        assert!(err.contains("available: a, b"), "{err}");
    }
}
