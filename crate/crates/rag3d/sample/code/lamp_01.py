import bpy

brass = bpy.data.materials.new(name="Brass")
brass.diffuse_color = (0.78, 0.6, 0.25, 1.0)
brass.metallic = 0.9
linen = bpy.data.materials.new(name="Linen")
linen.diffuse_color = (0.95, 0.92, 0.85, 1.0)

bpy.ops.mesh.primitive_cylinder_add(radius=0.12, depth=0.03, location=(0, 0, 0.015))
base = bpy.context.active_object
base.name = "Base"
base.data.materials.append(brass)

bpy.ops.mesh.primitive_cylinder_add(radius=0.012, depth=0.45, location=(0, 0, 0.255))
stem = bpy.context.active_object
stem.name = "Stem"
stem.data.materials.append(brass)

bpy.ops.mesh.primitive_cone_add(radius1=0.18, radius2=0.1, depth=0.22, location=(0, 0, 0.52))
shade = bpy.context.active_object
shade.name = "Shade"
shade.data.materials.append(linen)

bpy.ops.mesh.primitive_uv_sphere_add(radius=0.035, location=(0, 0, 0.47))
bulb = bpy.context.active_object
bulb.name = "Bulb"
