"""Patient-monitoring backend: event-sourced store, domain service, HTTP app."""
