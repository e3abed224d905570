//! Invocation counters for the transform and key-switching primitives.

use std::ops::Sub;
use std::sync::atomic::{AtomicU64, Ordering};

macro_rules! counters {
    ($($field:ident),* $(,)?) => {
        /// Shared, thread-safe counters.
        #[derive(Debug, Default)]
        pub struct Counters {
            $($field: AtomicU64,)*
        }

        /// Point-in-time copy of [`Counters`].
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
        pub struct CounterSnapshot {
            $(pub $field: u64,)*
        }

        impl Counters {
            pub fn snapshot(&self) -> CounterSnapshot {
                CounterSnapshot { $($field: self.$field.load(Ordering::Relaxed),)* }
            }

            pub fn reset(&self) {
                $(self.$field.store(0, Ordering::Relaxed);)*
            }

            $(
                #[inline]
                pub fn $field(&self, k: u64) {
                    self.$field.fetch_add(k, Ordering::Relaxed);
                }
            )*
        }

        impl CounterSnapshot {
            /// `(name, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, u64)> {
                vec![$((stringify!($field), self.$field),)*]
            }
        }

        impl Sub for CounterSnapshot {
            type Output = CounterSnapshot;
            fn sub(self, rhs: Self) -> Self {
                CounterSnapshot { $($field: self.$field - rhs.$field,)* }
            }
        }
    };
}

counters!(ntt, intt, bconv, mod_up, mod_down, rescale, merged_mod_down, key_mult, automorphism);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_difference() {
        let c = Counters::default();
        c.ntt(3);
        let before = c.snapshot();
        c.ntt(2);
        c.mod_up(1);
        let d = c.snapshot() - before;
        assert_eq!(d.ntt, 2);
        assert_eq!(d.mod_up, 1);
        assert_eq!(d.intt, 0);
        c.reset();
        assert_eq!(c.snapshot(), CounterSnapshot::default());
    }
}
