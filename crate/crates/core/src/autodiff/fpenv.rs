//! Flush-to-zero scope for the floating-point unit.

/// Treats subnormal inputs and results as zero on the current thread until
/// dropped. A no-op off x86-64.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
const FTZ_DAZ: u32 = 0x8040;

impl FlushDenormals {
    #[allow(deprecated)]
    pub fn enable() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            // SAFETY: only the FTZ and DAZ bits change; both are valid on every x86-64 CPU
            unsafe {
                let saved = _mm_getcsr();
                _mm_setcsr(saved | FTZ_DAZ);
                FlushDenormals { saved }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushDenormals {}
    }
}

impl Drop for FlushDenormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the value read in `enable`
        unsafe {
            std::arch::x86_64::_mm_setcsr(self.saved)
        };
    }
}
