import bpy

granite = bpy.data.materials.new(name="Rock")
granite.diffuse_color = (0.42, 0.4, 0.37, 1.0)
granite.roughness = 1.0

bpy.ops.mesh.primitive_ico_sphere_add(subdivisions=4, radius=1.0, location=(0, 0, 0.5))
rock = bpy.context.active_object
rock.name = "Boulder"
rock.scale = (1.3, 0.9, 0.6)

displace = rock.modifiers.new(name="Displace", type='DISPLACE')
texture = bpy.data.textures.new("RockNoise", type='CLOUDS')
texture.noise_scale = 0.6
displace.texture = texture
displace.strength = 0.35
rock.data.materials.append(granite)
