use std::io::Write;

use super::LaunchConfig;
use crate::ir::KernelDef;
use crate::memory::DeviceMemoryImage;
use crate::sanitizer::{self, Access, BugReport};

/// Instrumentation callbacks. Defaults do nothing and accept every access.
pub trait Hooks {
    fn on_launch(&mut self, _kernel: &KernelDef, _cfg: &LaunchConfig) {}

    /// Called before every load and store. An error stops the launch.
    fn on_mem_access(
        &mut self,
        _image: &DeviceMemoryImage,
        _kernel: &KernelDef,
        _acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        Ok(())
    }

    /// Called on every block-to-block transition, taken or fallthrough.
    fn on_cf(&mut self, _kernel: &KernelDef, _src: u32, _dst: u32) {}
}

impl Hooks for () {}

impl<H: Hooks + ?Sized> Hooks for &mut H {
    fn on_launch(&mut self, kernel: &KernelDef, cfg: &LaunchConfig) {
        (**self).on_launch(kernel, cfg)
    }

    fn on_mem_access(
        &mut self,
        image: &DeviceMemoryImage,
        kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        (**self).on_mem_access(image, kernel, acc)
    }

    fn on_cf(&mut self, kernel: &KernelDef, src: u32, dst: u32) {
        (**self).on_cf(kernel, src, dst)
    }
}

/// Runs both hooks; the first one to reject an access wins.
impl<A: Hooks, B: Hooks> Hooks for (A, B) {
    fn on_launch(&mut self, kernel: &KernelDef, cfg: &LaunchConfig) {
        self.0.on_launch(kernel, cfg);
        self.1.on_launch(kernel, cfg);
    }

    fn on_mem_access(
        &mut self,
        image: &DeviceMemoryImage,
        kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        self.0.on_mem_access(image, kernel, acc)?;
        self.1.on_mem_access(image, kernel, acc)
    }

    fn on_cf(&mut self, kernel: &KernelDef, src: u32, dst: u32) {
        self.0.on_cf(kernel, src, dst);
        self.1.on_cf(kernel, src, dst);
    }
}

/// An absent hook does nothing.
impl<H: Hooks> Hooks for Option<H> {
    fn on_launch(&mut self, kernel: &KernelDef, cfg: &LaunchConfig) {
        if let Some(h) = self {
            h.on_launch(kernel, cfg)
        }
    }

    fn on_mem_access(
        &mut self,
        image: &DeviceMemoryImage,
        kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        match self {
            Some(h) => h.on_mem_access(image, kernel, acc),
            None => Ok(()),
        }
    }

    fn on_cf(&mut self, kernel: &KernelDef, src: u32, dst: u32) {
        if let Some(h) = self {
            h.on_cf(kernel, src, dst)
        }
    }
}

/// Checks every access with the sanitizer.
#[derive(Debug, Default, Clone, Copy)]
pub struct SanitizerHook;

impl Hooks for SanitizerHook {
    fn on_mem_access(
        &mut self,
        image: &DeviceMemoryImage,
        kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        sanitizer::check_access(image, &kernel.name, acc)
    }
}

/// Counts events; used to check that instrumentation sees everything.
#[derive(Debug, Default, Clone)]
pub struct CountingHooks {
    pub launches: u64,
    pub mem_events: u64,
    pub cf_events: u64,
}

impl Hooks for CountingHooks {
    fn on_launch(&mut self, _kernel: &KernelDef, _cfg: &LaunchConfig) {
        self.launches += 1;
    }

    fn on_mem_access(
        &mut self,
        _image: &DeviceMemoryImage,
        _kernel: &KernelDef,
        _acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        self.mem_events += 1;
        Ok(())
    }

    fn on_cf(&mut self, _kernel: &KernelDef, _src: u32, _dst: u32) {
        self.cf_events += 1;
    }
}

/// Writes one `EV` line per event:
///
/// ```text
/// EV mem <kernel> <iid> <ld|st> <space> <addr> <width> <ctaid>/<tid> tag=<id|->
/// EV cf <kernel> <src>,<dst>
/// ```
pub struct TraceHook<W: Write> {
    out: W,
}

impl<W: Write> TraceHook<W> {
    pub fn new(out: W) -> Self {
        TraceHook { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Hooks for TraceHook<W> {
    fn on_mem_access(
        &mut self,
        _image: &DeviceMemoryImage,
        kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        let tag = acc.tag.map_or("-".to_string(), |t| t.to_string());
        let _ = writeln!(
            self.out,
            "EV mem {} {} {} {} {:#x} {} {}/{} tag={}",
            kernel.name,
            acc.iid.unwrap_or(0),
            if acc.store { "st" } else { "ld" },
            acc.space,
            acc.addr,
            acc.width,
            acc.ctaid,
            acc.tid,
            tag
        );
        Ok(())
    }

    fn on_cf(&mut self, kernel: &KernelDef, src: u32, dst: u32) {
        let _ = writeln!(self.out, "EV cf {} {},{}", kernel.name, src, dst);
    }
}
