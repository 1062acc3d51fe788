//! Doc-tests for the guide. mdbook cannot run snippets that depend on a
//! workspace crate, so each chapter is included here as module docs and
//! `cargo test -p mccl-book` runs its code blocks.

#[cfg(doctest)]
macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

#[cfg(doctest)]
chapters! {
    introduction => "introduction.md",
    data => "data.md",
    subgraphs => "subgraphs.md",
    autodiff => "autodiff.md",
    views => "views.md",
    fusion => "fusion.md",
    training => "training.md",
    evaluation => "evaluation.md",
    cli => "cli.md",
}
