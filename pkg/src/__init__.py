# Optimal insulation toolkit
