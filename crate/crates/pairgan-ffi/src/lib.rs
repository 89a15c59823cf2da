//! C ABI surface for pairgan (populated alongside the core crate).
