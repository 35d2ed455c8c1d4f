# Tests for Brand Deconstruction Station
