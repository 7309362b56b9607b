# simcl - desk-scale contrastive learning engine and experiment harness
