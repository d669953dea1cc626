import bpy

porcelain = bpy.data.materials.new(name="Porcelain")
porcelain.diffuse_color = (0.97, 0.97, 0.95, 1.0)
porcelain.roughness = 0.15

bpy.ops.mesh.primitive_cylinder_add(vertices=64, radius=0.13, depth=0.012, location=(0, 0, 0.006))
plate = bpy.context.active_object
plate.name = "Plate"
plate.data.materials.append(porcelain)

bpy.ops.mesh.primitive_torus_add(major_radius=0.125, minor_radius=0.008, location=(0, 0, 0.014))
rim = bpy.context.active_object
rim.name = "Rim"
rim.data.materials.append(porcelain)
