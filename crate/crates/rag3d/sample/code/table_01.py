import bpy

walnut = bpy.data.materials.new(name="Walnut")
walnut.diffuse_color = (0.3, 0.18, 0.1, 1.0)

width, depth, height = 1.6, 0.9, 0.75
top_thickness = 0.05

bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0, 0, height - top_thickness / 2))
top = bpy.context.active_object
top.name = "Tabletop"
top.scale = (width / 2, depth / 2, top_thickness / 2)
top.data.materials.append(walnut)

inset = 0.08
for i, (sx, sy) in enumerate([(-1, -1), (1, -1), (-1, 1), (1, 1)]):
    x = sx * (width / 2 - inset)
    y = sy * (depth / 2 - inset)
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(x, y, (height - top_thickness) / 2))
    leg = bpy.context.active_object
    leg.name = f"Leg_{i}"
    leg.scale = (0.03, 0.03, (height - top_thickness) / 2)
    leg.data.materials.append(walnut)
