# Evidence pipeline, verifier and dependability services.
