//! Behaviour shared by every construction that can serve requests one at a time.

use crate::error::Result;
use crate::trace::{LogicalAccess, ObservedTrace, Payload};

pub trait Oram {
    /// Serve one logical request, appending every bus access it causes
    /// (including dummy evictions issued before it) to `out`.
    ///
    /// On error the accesses emitted so far are still in `out`.
    fn serve(&mut self, req: &LogicalAccess, out: &mut ObservedTrace) -> Result<Payload>;

    /// One dummy access for an idle slot.
    fn idle(&mut self, out: &mut ObservedTrace) -> Result<()>;

    fn stash_occupancy(&self) -> usize;
}

impl<T: Oram + ?Sized> Oram for Box<T> {
    fn serve(&mut self, req: &LogicalAccess, out: &mut ObservedTrace) -> Result<Payload> {
        (**self).serve(req, out)
    }

    fn idle(&mut self, out: &mut ObservedTrace) -> Result<()> {
        (**self).idle(out)
    }

    fn stash_occupancy(&self) -> usize {
        (**self).stash_occupancy()
    }
}
