//! The guide in `book/` is plain mdbook. Its code listings are compiled and
//! run here as doctests, one module per chapter.

#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/cameras.md")]
    pub mod cameras {}
    #[doc = include_str!("../../../book/src/prototypes.md")]
    pub mod prototypes {}
    #[doc = include_str!("../../../book/src/nrsfm.md")]
    pub mod nrsfm {}
    #[doc = include_str!("../../../book/src/basis.md")]
    pub mod basis {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    pub mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
