//! Synthetic agreement corpus.
//!
//! Every noun form is immediately followed by its agreeing verb form, one
//! document per (noun form, verb) pair: `the <noun> <verb> .`. Singular and
//! plural nouns appear equally often, so unigram counts of the two verb forms
//! are balanced and only the word directly before the verb carries number
//! information. A bigram model trained on it therefore agrees with whatever
//! noun is adjacent to the verb, which in attractor items is the attractor.

use crate::stimuli::{NounPair, Number, VerbPair};

pub fn agreement_corpus<'a, V>(nouns: &[NounPair], verbs: V) -> String
where
    V: IntoIterator<Item = &'a VerbPair>,
{
    let verbs: Vec<&VerbPair> = verbs.into_iter().collect();
    let mut out = String::new();
    for noun in nouns {
        for number in Number::BOTH {
            for verb in &verbs {
                out.push_str("the ");
                out.push_str(noun.form(number));
                out.push(' ');
                out.push_str(verb.form(number));
                out.push_str(" .\n");
            }
        }
    }
    out
}
