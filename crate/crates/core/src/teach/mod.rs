//! The teaching language and trainer sessions.
//!
//! ```text
//! statement := noun | verb | adj | rule | fact | ask | confirm ;
//! noun      := "noun" ident ["under" ident] ;
//! verb      := "verb" ident "from" ident "to" ident "in" "(" idlist ")"
//!              "out" "(" idlist ")" ["ext" "(" idlist ")"] ;
//! adj       := "adj" ident ":" ( idlist ["ordered"]
//!                               | "numeric" "(" ident ["," number "," number] ")" ) ;
//! rule      := "rule" ident ":" clause ("<=>" | "->") clause ["if" guardlist] ;
//! clause    := item {"and" item} ;
//! item      := ident "=" expr | guard ;
//! guard     := "given" "(" idlist ")" | "nonzero" "(" expr ")" ;
//! guardlist := guard {("and" | ",") guard} ;
//! fact      := "fact" ident "=" (ident | number) ;
//! ask       := "ask" ident ["given" ident "=" value {("," | "and") ident "=" value}] ;
//! confirm   := "yes" | "no" ;
//! ident     := bareword | quoted string ;
//! ```
//!
//! `⇔` and `→` are accepted for `<=>` and `->`.

pub mod lexer;
pub mod parser;
pub mod script;
pub mod session;

pub use parser::{parse_statement, parse_statement_at, AdjectiveDomain, ClauseItem, Command, ParseError, Statement};
pub use script::{replay_script, Replay, ScriptError, Snapshot};
pub use session::{
    apply_command, run_session_step, KbDelta, MachineUtterance, Proposal, Session, SessionError, Speaker,
    StepReply, TranscriptEntry, UtteranceKind,
};
