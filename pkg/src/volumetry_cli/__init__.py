# batch application for the volumetry pipeline
