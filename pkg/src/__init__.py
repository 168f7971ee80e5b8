# Detector adaptation tool server package
