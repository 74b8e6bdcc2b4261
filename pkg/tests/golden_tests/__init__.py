# Golden tests package
