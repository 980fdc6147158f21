"""String-editing domain: rules, descriptions, corpus, seq2seq models."""
